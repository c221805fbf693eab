use std::collections::VecDeque;

use super::BinaryMap;

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Keeps only the largest 8-connected component of set pixels. Among equal
/// sizes the component whose first pixel comes first in raster order wins.
pub fn largest_connected_component(map: &BinaryMap) -> BinaryMap {
    let (w, h) = (map.width(), map.height());
    let mut label = vec![0u32; w * h];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !map.bits()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for (dy, dx) in NEIGHBORS {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if map.bits()[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
    }
    match best {
        None => map.clone(),
        Some((keep, _)) => {
            BinaryMap::from_bits(w, h, label.iter().map(|&l| l == keep).collect()).expect("same geometry")
        }
    }
}

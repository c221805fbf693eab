use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::{Layer, LayerKind, Stack, Tensor};

/// Elementwise mean of the primaries of `nets`.
///
/// Each mean is taken in double precision over the sorted inputs, so the
/// result does not depend on the order of `nets`.
pub fn merge_primary(nets: &[&Network]) -> Result<Stack<f32>> {
    let first = nets.first().ok_or_else(|| Error::Architecture("nothing to merge".into()))?;
    for net in nets {
        let same = net.primary.layers.len() == first.primary.layers.len()
            && net.primary.layers.iter().zip(&first.primary.layers).all(|(a, b)| {
                a.kind == b.kind && a.weights.shape() == b.weights.shape() && a.bias.shape() == b.bias.shape()
            });
        if !same {
            return Err(Error::Architecture(format!(
                "primary {:?} differs from {:?}",
                net.arch.conv, first.arch.conv
            )));
        }
    }
    let n = nets.len() as f64;
    let mut column = vec![0.0f64; nets.len()];
    let mut mean = |pick: &dyn Fn(&Network) -> &Tensor<f32>| -> Tensor<f32> {
        let shape = pick(first).shape().to_vec();
        let data = (0..pick(first).len())
            .map(|i| {
                for (slot, net) in column.iter_mut().zip(nets) {
                    *slot = pick(net).data()[i] as f64;
                }
                column.sort_by(f64::total_cmp);
                (column.iter().sum::<f64>() / n) as f32
            })
            .collect();
        Tensor::from_vec(&shape, data).expect("shape of first primary")
    };
    let layers = (0..first.primary.layers.len())
        .map(|l| Layer {
            kind: first.primary.layers[l].kind,
            relu: first.primary.layers[l].relu,
            weights: mean(&|net| &net.primary.layers[l].weights),
            bias: mean(&|net| &net.primary.layers[l].bias),
        })
        .collect();
    Ok(Stack::new(layers))
}

fn check_linear(net: &Stack<f64>) -> Result<()> {
    let ok = net.layers.len() == 3
        && net
            .layers
            .iter()
            .all(|l| l.kind == LayerKind::Dense && !l.relu && l.bias.data().iter().all(|&b| b == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Architecture("residual check needs bias-free linear 3-layer nets".into()))
    }
}

/// Replacing each net's first layer `W1` by `merged_first` shifts its output
/// by `W3 W2 (merged_first - W1) v`. Returns the worst absolute deviation
/// between the measured shift and that prediction over all nets and probes.
pub fn merge_residual_check(nets: &[Stack<f64>], merged_first: &Layer<f64>, probes: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for net in nets {
        check_linear(net)?;
        let mut merged = net.clone();
        merged.layers[0] = merged_first.clone();
        let mut delta = net.clone();
        delta.layers[0].weights = Tensor::from_vec(
            net.layers[0].weights.shape(),
            merged_first
                .weights
                .data()
                .iter()
                .zip(net.layers[0].weights.data())
                .map(|(m, w)| m - w)
                .collect(),
        )?;
        for v in probes {
            let v = Tensor::from_vec(&[v.len()], v.clone())?;
            let y = net.forward(&v)?;
            let y_hat = merged.forward(&v)?;
            let predicted = delta.forward(&v)?;
            for ((a, b), p) in y_hat.data().iter().zip(y.data()).zip(predicted.data()) {
                worst = worst.max(((a - b) - p).abs());
            }
        }
    }
    Ok(worst)
}

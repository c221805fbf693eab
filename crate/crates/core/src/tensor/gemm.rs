//! Packed, cache-blocked matrix multiply.
//!
//! Operands are arbitrary-stride views so transposed products need no copy
//! beyond packing. Each output element is accumulated over `k` in a fixed
//! order that depends only on `k`, never on the element's row or column, so a
//! sample's result does not change with its position in a batch.

use super::Scalar;

const KC: usize = 256;
const MC: usize = 96;
const NC: usize = 2048;

/// Strided read-only matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S: Copy> MatRef<'a, S> {
    pub fn row_major(data: &'a [S], cols: usize) -> Self {
        MatRef { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [S], cols: usize) -> Self {
        MatRef { data, rs: 1, cs: cols }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.rs + j * self.cs]
    }
}

/// Packing scratch reused across calls on one thread.
#[derive(Debug, Default)]
pub(super) struct PackBuffers<S> {
    a: Vec<S>,
    b: Vec<S>,
}

impl<S: Scalar> PackBuffers<S> {
    fn take(&mut self, a_len: usize, b_len: usize) -> (&mut [S], &mut [S]) {
        if self.a.len() < a_len {
            self.a.resize(a_len, S::zero());
        }
        if self.b.len() < b_len {
            self.b.resize(b_len, S::zero());
        }
        (&mut self.a[..a_len], &mut self.b[..b_len])
    }
}

/// `c = a * b` (or `c += a * b` when `accumulate`), `a` is `m x k`, `b` is
/// `k x n`, `c` is row-major `m x n` with leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: MatRef<'_, S>,
    b: MatRef<'_, S>,
    c: &mut [S],
    ldc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(ldc >= n && c.len() >= (m - 1) * ldc + n, "gemm: output too small");
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                c[i * ldc..i * ldc + n].fill(S::zero());
            }
        }
        return;
    }
    assert!(a.data.len() > (m - 1) * a.rs + (k - 1) * a.cs, "gemm: lhs too small");
    assert!(b.data.len() > (k - 1) * b.rs + (n - 1) * b.cs, "gemm: rhs too small");
    S::gemm_kernel(m, n, k, a, b, c, ldc, accumulate)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn dispatch<S: Scalar, const MR: usize, const NR: usize, const MR512: usize, const NR512: usize>(
    m: usize,
    n: usize,
    k: usize,
    a: MatRef<'_, S>,
    b: MatRef<'_, S>,
    c: &mut [S],
    ldc: usize,
    accumulate: bool,
    bufs: &mut PackBuffers<S>,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { gemm_avx512::<S, MR512, NR512>(m, n, k, a, b, c, ldc, accumulate, bufs) };
            return;
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { gemm_avx2::<S, MR, NR>(m, n, k, a, b, c, ldc, accumulate, bufs) };
            return;
        }
    }
    gemm_blocked::<S, MR, NR, false>(m, n, k, a, b, c, ldc, accumulate, bufs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_avx2<S: Scalar, const MR: usize, const NR: usize>(
    m: usize,
    n: usize,
    k: usize,
    a: MatRef<'_, S>,
    b: MatRef<'_, S>,
    c: &mut [S],
    ldc: usize,
    accumulate: bool,
    bufs: &mut PackBuffers<S>,
) {
    gemm_blocked::<S, MR, NR, true>(m, n, k, a, b, c, ldc, accumulate, bufs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_avx512<S: Scalar, const MR: usize, const NR: usize>(
    m: usize,
    n: usize,
    k: usize,
    a: MatRef<'_, S>,
    b: MatRef<'_, S>,
    c: &mut [S],
    ldc: usize,
    accumulate: bool,
    bufs: &mut PackBuffers<S>,
) {
    gemm_blocked::<S, MR, NR, true>(m, n, k, a, b, c, ldc, accumulate, bufs)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_blocked<S: Scalar, const MR: usize, const NR: usize, const FMA: bool>(
    m: usize,
    n: usize,
    k: usize,
    a: MatRef<'_, S>,
    b: MatRef<'_, S>,
    c: &mut [S],
    ldc: usize,
    accumulate: bool,
    bufs: &mut PackBuffers<S>,
) {
    let kc_max = KC.min(k);
    let (apack, bpack) = bufs.take(
        MC.min(m).div_ceil(MR) * MR * kc_max,
        NC.min(n).div_ceil(NR) * NR * kc_max,
    );

    for jc in (0..n).step_by(NC) {
        let nc = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            let overwrite = pc == 0 && !accumulate;
            pack_b::<S, NR>(&b, pc, kc, jc, nc, bpack);
            for ic in (0..m).step_by(MC) {
                let mc = MC.min(m - ic);
                pack_a::<S, MR>(&a, ic, mc, pc, kc, apack);
                for jr in (0..nc).step_by(NR) {
                    let nr = NR.min(nc - jr);
                    let bp = &bpack[jr * kc..(jr + NR) * kc];
                    for ir in (0..mc).step_by(MR) {
                        let mr = MR.min(mc - ir);
                        let ap = &apack[ir * kc..(ir + MR) * kc];
                        let acc = micro_kernel::<S, MR, NR, FMA>(kc, ap, bp);
                        let row0 = ic + ir;
                        let col0 = jc + jr;
                        for (i, acc_row) in acc.iter().enumerate().take(mr) {
                            let out = &mut c[(row0 + i) * ldc + col0..(row0 + i) * ldc + col0 + nr];
                            if overwrite {
                                out.copy_from_slice(&acc_row[..nr]);
                            } else {
                                for (o, &v) in out.iter_mut().zip(acc_row.iter()) {
                                    *o = *o + v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<S: Scalar, const MR: usize, const NR: usize, const FMA: bool>(
    kc: usize,
    ap: &[S],
    bp: &[S],
) -> [[S; NR]; MR] {
    let mut acc = [[S::zero(); NR]; MR];
    let ap = &ap[..kc * MR];
    let bp = &bp[..kc * NR];
    for (arow, brow) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)) {
        let brow: &[S; NR] = brow.try_into().unwrap();
        for i in 0..MR {
            let av = arow[i];
            for j in 0..NR {
                acc[i][j] = if FMA {
                    av.mul_add(brow[j], acc[i][j])
                } else {
                    av * brow[j] + acc[i][j]
                };
            }
        }
    }
    acc
}

/// Packs `a[ic..ic+mc, pc..pc+kc]` into MR-row panels, k-major inside a panel.
#[inline(always)]
fn pack_a<S: Scalar, const MR: usize>(
    a: &MatRef<'_, S>,
    ic: usize,
    mc: usize,
    pc: usize,
    kc: usize,
    out: &mut [S],
) {
    for (panel, ir) in (0..mc).step_by(MR).enumerate() {
        let dst = &mut out[panel * MR * kc..(panel + 1) * MR * kc];
        let mr = MR.min(mc - ir);
        if a.cs == 1 {
            if mr < MR {
                dst.fill(S::zero());
            }
            for i in 0..mr {
                let row = &a.data[(ic + ir + i) * a.rs + pc..][..kc];
                for (p, &v) in row.iter().enumerate() {
                    dst[p * MR + i] = v;
                }
            }
            continue;
        }
        for p in 0..kc {
            for i in 0..MR {
                dst[p * MR + i] = if i < mr {
                    a.at(ic + ir + i, pc + p)
                } else {
                    S::zero()
                };
            }
        }
    }
}

/// Packs `b[pc..pc+kc, jc..jc+nc]` into NR-column panels, k-major inside a panel.
#[inline(always)]
fn pack_b<S: Scalar, const NR: usize>(
    b: &MatRef<'_, S>,
    pc: usize,
    kc: usize,
    jc: usize,
    nc: usize,
    out: &mut [S],
) {
    for (panel, jr) in (0..nc).step_by(NR).enumerate() {
        let dst = &mut out[panel * NR * kc..(panel + 1) * NR * kc];
        let nr = NR.min(nc - jr);
        if b.cs == 1 && nr == NR {
            for p in 0..kc {
                let start = (pc + p) * b.rs + jc + jr;
                dst[p * NR..(p + 1) * NR].copy_from_slice(&b.data[start..start + NR]);
            }
            continue;
        }
        if b.rs == 1 {
            if nr < NR {
                dst.fill(S::zero());
            }
            for j in 0..nr {
                let col = &b.data[(jc + jr + j) * b.cs + pc..][..kc];
                for (p, &v) in col.iter().enumerate() {
                    dst[p * NR + j] = v;
                }
            }
            continue;
        }
        for p in 0..kc {
            for j in 0..NR {
                dst[p * NR + j] = if j < nr {
                    b.at(pc + p, jc + jr + j)
                } else {
                    S::zero()
                };
            }
        }
    }
}

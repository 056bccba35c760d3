//! Dense kernels. All reductions run in `f64` with the reduction index
//! ascending, so results do not depend on blocking or vector width.

use alloc::vec;
use alloc::vec::Vec;

use super::spec::ConvGeom;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] = a[m×k] · b[k×n]`, row-major, `c` overwritten.
///
/// Each `c[i][j]` is `Σ_p a[i][p]·b[p][j]` summed for `p = 0, 1, …` in that
/// order. Operands are packed into zero-padded `MR`-row and `NR`-column
/// panels so the inner kernel keeps a full tile of accumulators in registers;
/// padding lanes are computed and thrown away.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row_blocks = m.div_ceil(MR);
    let mut a_packed = vec![0.0f64; row_blocks * k * MR];
    for (ib, block) in a_packed.chunks_exact_mut(k * MR).enumerate() {
        for r in 0..MR.min(m - ib * MR) {
            let row = &a[(ib * MR + r) * k..(ib * MR + r + 1) * k];
            for (p, &v) in row.iter().enumerate() {
                block[p * MR + r] = v;
            }
        }
    }
    let mut panel = vec![0.0f64; k * NR];
    for j in (0..n).step_by(NR) {
        let w = NR.min(n - j);
        for p in 0..k {
            let dst = &mut panel[p * NR..(p + 1) * NR];
            dst[..w].copy_from_slice(&b[p * n + j..p * n + j + w]);
            dst[w..].fill(0.0);
        }
        for (ib, block) in a_packed.chunks_exact(k * MR).enumerate() {
            let acc = micro_kernel(block, &panel);
            let i = ib * MR;
            for (r, acc_row) in acc.iter().enumerate().take(MR.min(m - i)) {
                c[(i + r) * n + j..(i + r) * n + j + w].copy_from_slice(&acc_row[..w]);
            }
        }
    }
}

#[inline(always)]
fn micro_kernel(a: &[f64], b: &[f64]) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (av, bv) in a.chunks_exact(MR).zip(b.chunks_exact(NR)) {
        let av: &[f64; MR] = av.try_into().unwrap();
        let bv: &[f64; NR] = bv.try_into().unwrap();
        for r in 0..MR {
            for q in 0..NR {
                acc[r][q] += av[r] * bv[q];
            }
        }
    }
    acc
}

/// Row-major transpose of an `r×c` matrix.
pub fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

/// Unfolds a channel-major batch `[cin, n, h, w]` into columns
/// `[cin·kh·kw, n·ho·wo]`. Row `(d·kh + u)·kw + v` holds input channel `d`
/// sampled at kernel offset `(u, v)`; padding reads as zero.
pub fn im2col(g: &ConvGeom, n: usize, x: &[f32]) -> Vec<f64> {
    let p = n * g.ho * g.wo;
    let mut cols = vec![0.0f64; g.k() * p];
    let hw = g.h * g.w;
    for d in 0..g.cin {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (d * g.kh + u) * g.kw + v;
                let dst = &mut cols[row * p..(row + 1) * p];
                for s in 0..n {
                    let src = &x[(d * n + s) * hw..(d * n + s + 1) * hw];
                    for i in 0..g.ho {
                        let y = (i * g.stride + u) as isize - g.pad as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let srow = &src[y as usize * g.w..(y as usize + 1) * g.w];
                        let base = (s * g.ho + i) * g.wo;
                        for j in 0..g.wo {
                            let xx = (j * g.stride + v) as isize - g.pad as isize;
                            if xx >= 0 && xx < g.w as isize {
                                dst[base + j] = f64::from(srow[xx as usize]);
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input
/// batch layout, summing overlapping windows.
pub fn col2im(g: &ConvGeom, n: usize, cols: &[f64]) -> Vec<f64> {
    let p = n * g.ho * g.wo;
    let hw = g.h * g.w;
    let mut dx = vec![0.0f64; g.cin * n * hw];
    for d in 0..g.cin {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (d * g.kh + u) * g.kw + v;
                let src = &cols[row * p..(row + 1) * p];
                for s in 0..n {
                    let dst = &mut dx[(d * n + s) * hw..(d * n + s + 1) * hw];
                    for i in 0..g.ho {
                        let y = (i * g.stride + u) as isize - g.pad as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let base = (s * g.ho + i) * g.wo;
                        for j in 0..g.wo {
                            let xx = (j * g.stride + v) as isize - g.pad as isize;
                            if xx >= 0 && xx < g.w as isize {
                                dst[y as usize * g.w + xx as usize] += src[base + j];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

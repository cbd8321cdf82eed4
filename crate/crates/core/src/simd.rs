//! Hot interpolation kernels with an AVX-512 path chosen at runtime. Both paths perform the
//! same fused multiply-adds in the same order, so results are bit-identical.

/// `out[c] = w0·r0[c]`, then `fma(w_j, r_j[c], acc)` for `j = 1..8`.
#[inline]
pub(crate) fn blend(rows: [&[f64]; 8], w: &[f64; 8], out: &mut [f64]) {
    let k = out.len();
    let rows = rows.map(|r| &r[..k]);
    blend_scalar(rows, w, out, 0);
}

fn blend_scalar(rows: [&[f64]; 8], w: &[f64; 8], out: &mut [f64], from: usize) {
    let [r0, r1, r2, r3, r4, r5, r6, r7] = rows;
    for c in from..out.len() {
        let mut acc = w[0] * r0[c];
        acc = w[1].mul_add(r1[c], acc);
        acc = w[2].mul_add(r2[c], acc);
        acc = w[3].mul_add(r3[c], acc);
        acc = w[4].mul_add(r4[c], acc);
        acc = w[5].mul_add(r5[c], acc);
        acc = w[6].mul_add(r6[c], acc);
        acc = w[7].mul_add(r7[c], acc);
        out[c] = acc;
    }
}

/// Running channel max; a value equal to the current best wins only with a lower index.
#[inline]
pub(crate) fn take_max(vals: &[f64], i: usize, best: &mut [f64], arg: &mut [usize]) {
    let n = vals.len();
    let (best, arg) = (&mut best[..n], &mut arg[..n]);
    take_max_scalar(vals, i, best, arg, 0);
}

fn take_max_scalar(vals: &[f64], i: usize, best: &mut [f64], arg: &mut [usize], from: usize) {
    for j in from..vals.len() {
        let v = vals[j];
        let better = (v > best[j]) | ((v == best[j]) & (i < arg[j]));
        best[j] = if better { v } else { best[j] };
        arg[j] = if better { i } else { arg[j] };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dispatch_matches_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [1, 7, 8, 9, 64, 131] {
            let data: Vec<f64> = (0..8 * k).map(|_| rng.random::<f64>() - 0.5).collect();
            let rows: [&[f64]; 8] = std::array::from_fn(|j| &data[j * k..(j + 1) * k]);
            let w: [f64; 8] = std::array::from_fn(|_| rng.random());
            let (mut fast, mut slow) = (vec![0.0; k], vec![0.0; k]);
            blend(rows, &w, &mut fast);
            blend_scalar(rows, &w, &mut slow, 0);
            assert_eq!(fast, slow);

            let mut best = vec![f64::NEG_INFINITY; k];
            let mut arg = vec![usize::MAX; k];
            let (mut best2, mut arg2) = (best.clone(), arg.clone());
            for i in [5, 3, 9, 3, 0] {
                let vals: Vec<f64> = (0..k).map(|_| (rng.random_range(0..3)) as f64).collect();
                take_max(&vals, i, &mut best, &mut arg);
                take_max_scalar(&vals, i, &mut best2, &mut arg2, 0);
            }
            assert_eq!(best, best2);
            assert_eq!(arg, arg2);
        }
    }
}

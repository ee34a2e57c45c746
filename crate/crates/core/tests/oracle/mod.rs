//! Reference implementations used only by tests.
//!
//! Each routine takes a different route from the library code it checks:
//! quaternion eigen-decomposition instead of an SVD for alignment, plain
//! permutation and subset enumeration for the combinatorial solvers, and
//! moment formulas for SSIM.

#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, Vector3};

pub type P3 = Vector3<f64>;

/// Similarity `(scale, rotation, translation)` from the quaternion form of
/// absolute orientation, with least-squares scale. `None` for collinear sets.
pub fn horn_quaternion(src: &[P3], dst: &[P3]) -> Option<(f64, Matrix3<f64>, P3)> {
    let n = src.len();
    if n < 3 || collinear(src) {
        return None;
    }
    let cs = src.iter().sum::<P3>() / n as f64;
    let cd = dst.iter().sum::<P3>() / n as f64;
    let mut m = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        m += (a - cs) * (b - cd).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    #[rustfmt::skip]
    let k = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = k.symmetric_eigen();
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best);
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    #[rustfmt::skip]
    let r = Matrix3::new(
        w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z,
    );
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in src.iter().zip(dst) {
        let ra = r * (a - cs);
        num += (b - cd).dot(&ra);
        den += (a - cs).norm_squared();
    }
    let s = num / den;
    if s.is_nan() || s <= 0.0 {
        return None;
    }
    Some((s, r, cd - r * cs * s))
}

fn collinear(points: &[P3]) -> bool {
    let p0 = points[0];
    let far = points
        .iter()
        .map(|p| p - p0)
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
        .unwrap();
    let scale = far.norm_squared();
    if scale == 0.0 {
        return true;
    }
    points.iter().all(|p| (p - p0).cross(&far).norm() < 1e-9 * scale)
}

fn count(s: f64, r: &Matrix3<f64>, t: &P3, pred: &[P3], gt: &[P3], threshold: f64) -> Vec<usize> {
    (0..pred.len())
        .filter(|&i| (gt[i] - (r * pred[i] * s + t)).norm() < threshold)
        .collect()
}

/// Largest registered count over all triplets, with one refit per triplet.
pub fn brute_force_registered(pred: &[P3], gt: &[P3], threshold: f64) -> Option<usize> {
    let n = pred.len();
    let mut best: Option<usize> = None;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let tri = [i, j, k];
                let s3: Vec<P3> = tri.iter().map(|&x| pred[x]).collect();
                let g3: Vec<P3> = tri.iter().map(|&x| gt[x]).collect();
                let Some((s, r, t)) = horn_quaternion(&s3, &g3) else {
                    continue;
                };
                let mut inl = count(s, &r, &t, pred, gt, threshold);
                for x in tri {
                    if !inl.contains(&x) {
                        inl.push(x);
                    }
                }
                inl.sort_unstable();
                let src: Vec<P3> = inl.iter().map(|&x| pred[x]).collect();
                let dst: Vec<P3> = inl.iter().map(|&x| gt[x]).collect();
                let c = match horn_quaternion(&src, &dst) {
                    Some((s2, r2, t2)) => count(s2, &r2, &t2, pred, gt, threshold).len(),
                    None => count(s, &r, &t, pred, gt, threshold).len(),
                };
                best = Some(best.map_or(c, |b| b.max(c)));
            }
        }
    }
    best
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Minimum Hamiltonian cycle cost by enumerating every permutation with node 0 fixed.
pub fn brute_tsp(n: usize, w: impl Fn(usize, usize) -> f64) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best = f64::INFINITY;
    loop {
        let mut c = w(0, rest[0]) + w(rest[rest.len() - 1], 0);
        for p in rest.windows(2) {
            c += w(p[0], p[1]);
        }
        best = best.min(c);
        if !next_permutation(&mut rest) {
            break;
        }
    }
    best
}

/// Minimum total weight over all spanning trees, by checking every `(n−1)`-subset of edges.
pub fn brute_mst(n: usize, edges: &[(usize, usize, f64)]) -> Option<f64> {
    if n <= 1 {
        return Some(0.0);
    }
    let m = edges.len();
    let mut best: Option<f64> = None;
    for mask in 0u64..(1u64 << m) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        // connectivity by repeated relaxation
        let mut comp: Vec<usize> = (0..n).collect();
        let chosen: Vec<_> = (0..m).filter(|&e| mask & (1 << e) != 0).map(|e| edges[e]).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for &(a, b, _) in &chosen {
                let lo = comp[a].min(comp[b]);
                if comp[a] != lo || comp[b] != lo {
                    comp[a] = lo;
                    comp[b] = lo;
                    changed = true;
                }
            }
        }
        if comp.iter().all(|&c| c == 0) {
            let total: f64 = chosen.iter().map(|e| e.2).sum();
            best = Some(best.map_or(total, |b: f64| b.min(total)));
        }
    }
    best
}

/// Mean windowed SSIM using `E[xy] − E[x]E[y]` moments.
pub fn naive_ssim(a: &[f64], b: &[f64], width: usize, height: usize, window: usize, stride: usize) -> f64 {
    let c1 = 1e-4;
    let c2 = 9e-4;
    let mut vals = Vec::new();
    let mut y0 = 0;
    while y0 + window <= height {
        let mut x0 = 0;
        while x0 + window <= width {
            let idx: Vec<usize> = (y0..y0 + window)
                .flat_map(|y| (x0..x0 + window).map(move |x| y * width + x))
                .collect();
            let n = idx.len() as f64;
            let ea = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
            let eb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
            let eaa = idx.iter().map(|&i| a[i] * a[i]).sum::<f64>() / n;
            let ebb = idx.iter().map(|&i| b[i] * b[i]).sum::<f64>() / n;
            let eab = idx.iter().map(|&i| a[i] * b[i]).sum::<f64>() / n;
            let (va, vb, cov) = (eaa - ea * ea, ebb - eb * eb, eab - ea * eb);
            vals.push(((2.0 * ea * eb + c1) * (2.0 * cov + c2)) / ((ea * ea + eb * eb + c1) * (va + vb + c2)));
            x0 += stride;
        }
        y0 += stride;
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

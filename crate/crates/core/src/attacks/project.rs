/// Euclidean projection of `v` onto the L1 ball of radius `radius`
/// (sort-and-threshold method). Vectors already inside are returned as is.
pub fn project_l1_ball(v: &[f32], radius: f32) -> Vec<f32> {
    let l1: f64 = v.iter().map(|&x| (x as f64).abs()).sum();
    if l1 <= radius as f64 {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|&x| (x as f64).abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - radius as f64) / (j + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    let out: Vec<f32> = v
        .iter()
        .map(|&x| {
            let m = ((x as f64).abs() - theta).max(0.0);
            (m * (x as f64).signum()) as f32
        })
        .collect();
    // Rounding to f32 can leave the sum a hair above the radius.
    let s: f64 = out.iter().map(|&x| (x as f64).abs()).sum();
    if s > radius as f64 {
        let k = radius as f64 / s;
        out.into_iter().map(|x| (x as f64 * k) as f32).collect()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inside_is_identity() {
        let v = [0.1, -0.2, 0.3];
        assert_eq!(project_l1_ball(&v, 1.0), v);
    }

    #[test]
    fn matches_simplex_threshold_by_hand() {
        // |v| = (3, 1, 0.5), radius 2: theta = (3 + 1 - 2) / 2 = 1 → (2, 0, 0).
        let p = project_l1_ball(&[3.0, -1.0, 0.5], 2.0);
        assert_eq!(p, vec![2.0, 0.0, 0.0]);
        // radius 3.5: theta = (4.5 - 3.5) / 3 = 1/3 → (8/3, -2/3, 1/6).
        let p = project_l1_ball(&[3.0, -1.0, 0.5], 3.5);
        let e = [8.0 / 3.0, -2.0 / 3.0, 1.0 / 6.0];
        for (a, b) in p.iter().zip(e) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

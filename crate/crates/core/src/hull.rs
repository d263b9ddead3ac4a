//! Volume of the 3D convex hull of a point set (incremental construction).

use nalgebra::Vector3;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
}

impl Face {
    fn new(points: &[Vector3<f64>], v: [usize; 3]) -> Self {
        let [a, b, c] = v.map(|i| points[i]);
        let normal = (b - a).cross(&(c - a)).normalize();
        Face { v, normal, offset: normal.dot(&a) }
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn farthest_by<F: Fn(&Vector3<f64>) -> f64>(points: &[Vector3<f64>], f: F) -> (usize, f64) {
    points.iter().enumerate().map(|(i, p)| (i, f(p))).fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Convex hull volume. Degenerate (coplanar, collinear or coincident) sets
/// have zero volume.
pub fn convex_hull_volume(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 4 {
        return 0.0;
    }
    let scale = points.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-9 * scale;

    let p0 = 0;
    let (p1, d1) = farthest_by(points, |p| (p - points[p0]).norm());
    if d1 <= eps {
        return 0.0;
    }
    let dir = (points[p1] - points[p0]).normalize();
    let (p2, d2) = farthest_by(points, |p| {
        let r = p - points[p0];
        (r - dir * r.dot(&dir)).norm()
    });
    if d2 <= eps {
        return 0.0;
    }
    let n = (points[p1] - points[p0]).cross(&(points[p2] - points[p0])).normalize();
    let (p3, d3) = farthest_by(points, |p| n.dot(&(p - points[p0])).abs());
    if d3 <= eps {
        return 0.0;
    }

    let interior = (points[p0] + points[p1] + points[p2] + points[p3]) / 4.0;
    let mut faces: Vec<Option<Face>> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();

    let add_face = |faces: &mut Vec<Option<Face>>, edges: &mut HashMap<(usize, usize), usize>, mut v: [usize; 3]| {
        let mut f = Face::new(points, v);
        if f.distance(&interior) > 0.0 {
            v.swap(1, 2);
            f = Face::new(points, v);
        }
        let idx = faces.len();
        for k in 0..3 {
            edges.insert((v[k], v[(k + 1) % 3]), idx);
        }
        faces.push(Some(f));
    };

    for tri in [[p0, p1, p2], [p0, p1, p3], [p0, p2, p3], [p1, p2, p3]] {
        add_face(&mut faces, &mut edges, tri);
    }

    for (i, p) in points.iter().enumerate() {
        if [p0, p1, p2, p3].contains(&i) {
            continue;
        }
        let visible: Vec<usize> =
            faces.iter().enumerate().filter_map(|(fi, f)| f.filter(|f| f.distance(p) > eps).map(|_| fi)).collect();
        if visible.is_empty() {
            continue;
        }
        let is_visible = |fi: usize| visible.binary_search(&fi).is_ok();
        let mut horizon = Vec::new();
        for &fi in &visible {
            let v = faces[fi].unwrap().v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                match edges.get(&(b, a)) {
                    Some(&twin) if !is_visible(twin) => horizon.push((a, b)),
                    _ => {}
                }
            }
        }
        for &fi in &visible {
            let v = faces[fi].take().unwrap().v;
            for k in 0..3 {
                edges.remove(&(v[k], v[(k + 1) % 3]));
            }
        }
        for (a, b) in horizon {
            let idx = faces.len();
            for e in [(a, b), (b, i), (i, a)] {
                edges.insert(e, idx);
            }
            faces.push(Some(Face::new(points, [a, b, i])));
        }
    }

    faces
        .iter()
        .flatten()
        .map(|f| {
            let [a, b, c] = f.v.map(|k| points[k] - interior);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum::<f64>()
        .abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Enumerate every triple; a triple is a facet when all other points lie
    /// on one side of its plane.
    fn brute_force_volume(points: &[Vector3<f64>]) -> f64 {
        let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        let mut vol = 0.0;
        let n = points.len();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
                    let side: Vec<f64> = (0..n).filter(|m| ![i, j, k].contains(m)).map(|m| normal.dot(&(points[m] - points[i]))).collect();
                    if side.iter().all(|s| *s <= 0.0) || side.iter().all(|s| *s >= 0.0) {
                        let [a, b, c] = [i, j, k].map(|m| points[m] - centroid);
                        vol += a.dot(&b.cross(&c)).abs() / 6.0;
                    }
                }
            }
        }
        vol
    }

    #[test]
    fn unit_cube_with_interior_points() {
        let mut pts: Vec<Vector3<f64>> = (0..8).map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            pts.push(Vector3::new(rng.gen(), rng.gen(), rng.gen()));
        }
        assert_abs_diff_eq!(convex_hull_volume(&pts), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_facet_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<Vector3<f64>> = (0..10).map(|_| Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            assert_abs_diff_eq!(convex_hull_volume(&pts), brute_force_volume(&pts), epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_sets_have_no_volume() {
        let line: Vec<_> = (0..50).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.5)).collect();
        assert_eq!(convex_hull_volume(&line), 0.0);
        let plane: Vec<_> = (0..50).map(|i| Vector3::new((i % 7) as f64, (i / 7) as f64, 3.0)).collect();
        assert_eq!(convex_hull_volume(&plane), 0.0);
        assert_eq!(convex_hull_volume(&[Vector3::new(1.0, 1.0, 1.0); 20]), 0.0);
    }

    #[test]
    fn sphere_samples_approach_ball_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..4000)
            .map(|_| {
                let v = Vector3::new(rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                v.normalize() * 10.0
            })
            .collect();
        let v = convex_hull_volume(&pts);
        let ball = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!(v < ball && v > 0.97 * ball, "{v} vs {ball}");
    }
}

use crate::error::{Error, Result};

const TOL: f64 = 1e-12;

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` is inside the circumcircle of the counter-clockwise
/// triangle `abc` (the 4x4 lifted determinant, reduced by translating `d` to
/// the origin).
fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (ax, ay) = (a[0] - d[0], a[1] - d[1]);
    let (bx, by) = (b[0] - d[0], b[1] - d[1]);
    let (cx, cy) = (c[0] - d[0], c[1] - d[1]);
    let a2 = ax * ax + ay * ay;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx)
}

fn validate(points: &[f64]) -> Result<Vec<[f64; 2]>> {
    if points.len() % 2 != 0 {
        return Err(Error::Shape(format!("{} coordinates are not 2-D points", points.len())));
    }
    let pts: Vec<[f64; 2]> = points.chunks(2).map(|c| [c[0], c[1]]).collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "triangulation needs at least 3 points, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("point coordinates".into()));
    }
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&i, &j| pts[i][0].total_cmp(&pts[j][0]));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if pts[j][0] - pts[i][0] > TOL {
                break;
            }
            if (pts[j][1] - pts[i][1]).abs() <= TOL {
                let (lo, hi) = (i.min(j), i.max(j));
                return Err(Error::InvalidArgument(format!(
                    "points {lo} and {hi} coincide within {TOL}"
                )));
            }
        }
    }
    let far = (1..pts.len())
        .max_by(|&i, &j| dist2(pts[0], pts[i]).total_cmp(&dist2(pts[0], pts[j])))
        .unwrap();
    let base = dist2(pts[0], pts[far]).sqrt();
    let spread = pts
        .iter()
        .map(|&p| orient(pts[0], pts[far], p).abs() / base)
        .fold(0.0, f64::max);
    if spread <= TOL {
        return Err(Error::DegenerateGeometry("all points are collinear".into()));
    }
    Ok(pts)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn bowyer_watson(pts: &[[f64; 2]], scale: f64) -> Vec<[usize; 3]> {
    let n = pts.len();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let size = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let (cx, cy) = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0);
    let m = scale * size;
    let mut verts = pts.to_vec();
    verts.push([cx - 2.0 * m, cy - m]);
    verts.push([cx + 2.0 * m, cy - m]);
    verts.push([cx, cy + 2.0 * m]);

    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (pi, &p) in pts.iter().enumerate() {
        edges.clear();
        tris.retain(|t| {
            let bad = incircle(verts[t[0]], verts[t[1]], verts[t[2]], p) > -TOL;
            if bad {
                edges.extend([(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]);
            }
            !bad
        });
        for (k, &(a, b)) in edges.iter().enumerate() {
            let shared = edges
                .iter()
                .enumerate()
                .any(|(j, &(c, d))| j != k && ((c == b && d == a) || (c == a && d == b)));
            if !shared {
                tris.push([a, b, pi]);
            }
        }
    }
    tris.retain(|t| t.iter().all(|&v| v < n));
    tris
}

fn hull_area(pts: &[[f64; 2]]) -> f64 {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        for &q in &p {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
        if pass == 0 {
            p.reverse();
        }
    }
    let m = hull.len();
    (0..m)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % m]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        / 2.0
}

fn area(pts: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    orient(pts[t[0]], pts[t[1]], pts[t[2]]) / 2.0
}

/// Counter-clockwise Delaunay triangles of an `n x 2` point set (Bowyer-Watson
/// with a super-triangle). Cocircular ties count as inside the circumcircle.
pub fn triangulate(points: &[f64]) -> Result<Vec<[usize; 3]>> {
    let pts = validate(points)?;
    let hull = hull_area(&pts);
    let mut scale = 1e3;
    for _ in 0..4 {
        let tris = bowyer_watson(&pts, scale);
        let covered: f64 = tris.iter().map(|t| area(&pts, t)).sum();
        if (covered - hull).abs() <= 1e-10 * hull.max(1.0) {
            return Ok(tris);
        }
        scale *= 1e2;
    }
    Err(Error::DegenerateGeometry(
        "triangulation failed to cover the convex hull".into(),
    ))
}

/// Each triangle gives a third of its area to each of its vertices, so the
/// weights sum to the convex-hull area.
pub fn delaunay_weights_2d(points: &[f64]) -> Result<Vec<f64>> {
    let tris = triangulate(points)?;
    let pts: Vec<[f64; 2]> = points.chunks(2).map(|c| [c[0], c[1]]).collect();
    let mut w = vec![0.0; pts.len()];
    for t in &tris {
        let a = area(&pts, t) / 3.0;
        for &v in t {
            w[v] += a;
        }
    }
    Ok(w)
}

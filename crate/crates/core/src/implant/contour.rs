//! Cross-section contours: plane/mesh sectioning, multi-plane unfolding of
//! the femoral cut profile, and the over/under-hang fit metric.

use nalgebra::{Point2, Point3, Vector2, Vector3};

use crate::geometry::{Plane, TriMesh};

use super::{ImplantComponent, ImplantError};

/// Distance (mm) the implant sectioning plane is nudged off a fixation face
/// so coplanar implant facets produce a clean cross-section.  The nudge also
/// clears the first grid row above the face, where triangulated wall vertices
/// near the 90-degree crease carry the largest interpolation error.
const SECTION_OFFSET: f64 = 1.0;

/// Arc-length step (mm) for the dense contour sampling of the fit metric.
const SAMPLE_STEP: f64 = 0.2;

/// Closed planar polygon, vertices in millimetres.
#[derive(Debug, Clone)]
pub struct Polygon2 {
    pub points: Vec<Point2<f64>>,
}

impl Polygon2 {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self, ImplantError> {
        if points.len() < 3 {
            return Err(ImplantError::InvalidGeometry(
                "polygon needs at least three vertices".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut a = 0.0;
        for i in 0..n {
            let p = self.points[i];
            let q = self.points[(i + 1) % n];
            a += p.x * q.y - q.x * p.y;
        }
        a / 2.0
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n).map(|i| (self.points[(i + 1) % n] - self.points[i]).norm()).sum()
    }

    pub fn centroid(&self) -> Point2<f64> {
        let a = self.signed_area();
        if a.abs() < 1e-12 {
            let mut c = Vector2::zeros();
            for p in &self.points {
                c += p.coords;
            }
            return Point2::from(c / self.points.len() as f64);
        }
        let n = self.points.len();
        let mut c = Vector2::zeros();
        for i in 0..n {
            let p = self.points[i];
            let q = self.points[(i + 1) % n];
            let cross = p.x * q.y - q.x * p.y;
            c += (p.coords + q.coords) * cross;
        }
        Point2::from(c / (6.0 * a))
    }

    /// Reorients to counter-clockwise and rotates the vertex list so it
    /// starts at the lexicographically smallest vertex. This makes the
    /// arc-length parameterization independent of the input start point.
    pub fn canonical(&self) -> Polygon2 {
        let mut pts = self.points.clone();
        if self.signed_area() < 0.0 {
            pts.reverse();
        }
        let start = pts
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        pts.rotate_left(start);
        Polygon2 { points: pts }
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        let n = self.points.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Unsigned distance to the polygon boundary.
    pub fn boundary_distance(&self, p: &Point2<f64>) -> f64 {
        let n = self.points.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let ab = b - a;
            let t = if ab.norm_squared() > 0.0 {
                ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
            } else {
                0.0
            };
            best = best.min((p - (a + ab * t)).norm());
        }
        best
    }

    /// Closest point on the polygon boundary.
    pub fn boundary_closest(&self, p: &Point2<f64>) -> Point2<f64> {
        let n = self.points.len();
        let mut best = (f64::INFINITY, self.points[0]);
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let ab = b - a;
            let t = if ab.norm_squared() > 0.0 {
                ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a + ab * t;
            let d = (p - q).norm_squared();
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    /// Signed distance: negative inside, positive outside.
    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        let d = self.boundary_distance(p);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// Offsets every edge by `delta` along its outward normal (positive =
    /// outward for a counter-clockwise polygon) and intersects neighbouring
    /// edge lines to rebuild the vertices.
    pub fn offset(&self, delta: f64) -> Polygon2 {
        let poly = self.canonical();
        let n = poly.points.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let prev = poly.points[(i + n - 1) % n];
            let cur = poly.points[i];
            let next = poly.points[(i + 1) % n];
            let e0 = (cur - prev).normalize();
            let e1 = (next - cur).normalize();
            let n0 = Vector2::new(e0.y, -e0.x);
            let n1 = Vector2::new(e1.y, -e1.x);
            // intersection of the two offset edge lines
            let denom = e0.x * -e1.y - e0.y * -e1.x;
            let a0 = prev + n0 * delta;
            let a1 = cur + n1 * delta;
            if denom.abs() < 1e-12 {
                out.push(cur + n0 * delta);
            } else {
                let rhs = a1 - a0;
                let t = (rhs.x * -e1.y - rhs.y * -e1.x) / denom;
                out.push(a0 + e0 * t);
            }
        }
        Polygon2 { points: out }
    }

    /// Keeps the part of the polygon with `normal · (x - point) >= 0`
    /// (Sutherland–Hodgman single-plane clip).
    pub fn clip_half_plane(&self, point: Point2<f64>, normal: Vector2<f64>) -> Polygon2 {
        let n = self.points.len();
        let mut out = Vec::new();
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let da = normal.dot(&(a - point));
            let db = normal.dot(&(b - point));
            if da >= 0.0 {
                out.push(a);
            }
            if (da >= 0.0) != (db >= 0.0) {
                let t = da / (da - db);
                out.push(a + (b - a) * t);
            }
        }
        Polygon2 { points: out }
    }

    /// Uniform arc-length resampling with roughly the given step.
    pub fn resample(&self, step: f64) -> Polygon2 {
        let perim = self.perimeter();
        let n = ((perim / step).ceil() as usize).max(3);
        let mut pts = Vec::with_capacity(n);
        for i in 0..n {
            pts.push(self.point_at(i as f64 / n as f64));
        }
        Polygon2 { points: pts }
    }

    /// Point at normalized arc-length parameter `t ∈ [0, 1)`.
    pub fn point_at(&self, t: f64) -> Point2<f64> {
        let perim = self.perimeter();
        let mut target = (t.rem_euclid(1.0)) * perim;
        let n = self.points.len();
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let len = (b - a).norm();
            if target <= len || i == n - 1 {
                return if len > 0.0 { a + (b - a) * (target / len) } else { a };
            }
            target -= len;
        }
        self.points[0]
    }
}

/// Bone and implant cross-section contours in one shared 2D frame, with
/// the arcs (normalized arc-length intervals of the implant contour in its
/// canonical parameterization) excluded from fit metrics.
#[derive(Debug, Clone)]
pub struct ContourPair {
    pub bone: Polygon2,
    pub implant: Polygon2,
    pub excluded_arcs: Vec<(f64, f64)>,
}

/// Over/under-hang evaluation of a [`ContourPair`].
#[derive(Debug, Clone)]
pub struct HangProfile {
    /// Root-mean-square of the signed profile, mm.
    pub rmse: f64,
    /// Maximum absolute deviation, mm.
    pub hausdorff: f64,
    /// `(parameter, signed distance)` samples; positive = overhang.
    pub profile: Vec<(f64, f64)>,
}

/// Cuts a mesh with a plane and returns the closed intersection loops.
pub fn section_loops(mesh: &TriMesh, plane: &Plane) -> Vec<Vec<Point3<f64>>> {
    let mut segments: Vec<[Point3<f64>; 2]> = Vec::new();
    for t in 0..mesh.triangles.len() {
        let pts = mesh.triangle_points(t);
        let d: Vec<f64> = pts.iter().map(|p| plane.signed_distance(p)).collect();
        let mut cross = Vec::new();
        for e in 0..3 {
            let (da, db) = (d[e], d[(e + 1) % 3]);
            if (da >= 0.0) != (db >= 0.0) {
                let t = da / (da - db);
                cross.push(pts[e] + (pts[(e + 1) % 3] - pts[e]) * t);
            }
        }
        if cross.len() == 2 {
            segments.push([cross[0], cross[1]]);
        }
    }
    chain_segments(&segments)
}

fn quant(p: &Point3<f64>) -> (i64, i64, i64) {
    let s = 1e6;
    ((p.x * s).round() as i64, (p.y * s).round() as i64, (p.z * s).round() as i64)
}

fn chain_segments(segments: &[[Point3<f64>; 2]]) -> Vec<Vec<Point3<f64>>> {
    use std::collections::HashMap;
    let mut adj: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        adj.entry(quant(&s[0])).or_default().push(i);
        adj.entry(quant(&s[1])).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain = vec![segments[start][0], segments[start][1]];
        loop {
            let tail = *chain.last().unwrap();
            let key = quant(&tail);
            let next = adj
                .get(&key)
                .and_then(|ids| ids.iter().find(|&&i| !used[i]).copied());
            let Some(i) = next else { break };
            used[i] = true;
            let seg = &segments[i];
            if quant(&seg[0]) == key {
                chain.push(seg[1]);
            } else {
                chain.push(seg[0]);
            }
            if quant(chain.last().unwrap()) == quant(&chain[0]) {
                chain.pop();
                break;
            }
        }
        if chain.len() >= 3 {
            loops.push(chain);
        }
    }
    loops
}

fn loop_length(pts: &[Point2<f64>]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| (pts[(i + 1) % n] - pts[i]).norm()).sum()
}

fn largest_loop_2d(
    loops: Vec<Vec<Point3<f64>>>,
    origin: &Point3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
) -> Option<Polygon2> {
    let mut best: Option<Polygon2> = None;
    for lp in loops {
        let pts: Vec<Point2<f64>> = lp
            .iter()
            .map(|p| Point2::new((p - origin).dot(e1), (p - origin).dot(e2)))
            .collect();
        if pts.len() < 3 {
            continue;
        }
        let poly = Polygon2 { points: pts };
        if best.as_ref().map_or(true, |b| {
            poly.perimeter() > b.perimeter()
        }) {
            best = Some(poly);
        }
    }
    best
}

/// Cross-sections bone and implant with one plane and expresses both
/// contours in the plane's 2D frame. The implant is sectioned a fraction of
/// a millimetre off the plane (toward the implant body) so that fixation
/// facets lying exactly on the plane still yield a clean outline.
pub fn flatten_contours(
    bone: &TriMesh,
    implant: &ImplantComponent,
    plane: &Plane,
    excluded_arcs: &[(f64, f64)],
) -> Result<ContourPair, ImplantError> {
    validate_arcs(excluded_arcs)?;
    let (e1, e2) = plane.basis();
    let origin = plane.point;

    let bone_poly = largest_loop_2d(section_loops(bone, plane), &origin, &e1, &e2)
        .ok_or(ImplantError::NoIntersection)?;

    let imp_mesh = implant.mesh_in_patient();
    let mut imp_poly = None;
    for side in [1.0, -1.0] {
        let cut = plane.offset(side * SECTION_OFFSET);
        if let Some(p) = largest_loop_2d(section_loops(&imp_mesh, &cut), &origin, &e1, &e2) {
            imp_poly = Some(p);
            break;
        }
    }
    let implant_poly = imp_poly.ok_or(ImplantError::NoIntersection)?;

    Ok(ContourPair {
        bone: bone_poly,
        implant: implant_poly,
        excluded_arcs: excluded_arcs.to_vec(),
    })
}

/// Unfolds the multi-plane femoral cut profile into one 2D frame.
///
/// `planes` must be ordered along the profile (anterior → posterior for the
/// femoral set) with all cut normals perpendicular to one shared hinge
/// direction. Each plane's cross-section band (between the hinge lines with
/// its neighbours) is developed isometrically about the hinges, so arc
/// length within each band is preserved.
pub fn flatten_contours_multi(
    bone: &TriMesh,
    implant: &ImplantComponent,
    planes: &[Plane],
    excluded_arcs: &[(f64, f64)],
) -> Result<ContourPair, ImplantError> {
    validate_arcs(excluded_arcs)?;
    if planes.len() < 2 {
        return Err(ImplantError::InvalidGeometry(
            "multi-plane unfold needs at least two planes".into(),
        ));
    }
    let unfold = Unfold::build(planes)?;
    let imp_mesh = implant.mesh_in_patient();

    let bone_chains = unfold.section_chains(bone, 0.0);
    let imp_chains = unfold.section_chains(&imp_mesh, SECTION_OFFSET);
    let bone_poly = close_chains(bone_chains, 0.5).ok_or(ImplantError::NoIntersection)?;
    let implant_poly = close_chains(imp_chains, 0.8).ok_or(ImplantError::NoIntersection)?;

    Ok(ContourPair {
        bone: bone_poly,
        implant: implant_poly,
        excluded_arcs: excluded_arcs.to_vec(),
    })
}

/// Development map for an ordered fan of planes sharing one hinge direction.
struct Unfold {
    planes: Vec<Plane>,
    /// Shared hinge direction (unit).
    u: Vector3<f64>,
    /// One point on each hinge line (between plane k and k+1).
    hinges: Vec<Point3<f64>>,
    /// In-plane advance direction per plane, oriented along the profile.
    dirs: Vec<Vector3<f64>>,
    /// Unfolded station of each plane's reference hinge.
    stations: Vec<f64>,
}

impl Unfold {
    fn build(planes: &[Plane]) -> Result<Self, ImplantError> {
        let k = planes.len();
        let mut u = planes[0].normal.cross(&planes[k / 2].normal);
        if u.norm() < 1e-9 {
            u = planes[0].normal.cross(&planes[k - 1].normal);
        }
        if u.norm() < 1e-9 {
            return Err(ImplantError::InvalidGeometry(
                "cut planes do not define a hinge direction".into(),
            ));
        }
        let u = u.normalize();

        let mut hinges = Vec::with_capacity(k - 1);
        for i in 0..k - 1 {
            hinges.push(plane_plane_point(&planes[i], &planes[i + 1], &u)?);
        }

        let mut dirs = Vec::with_capacity(k);
        for i in 0..k {
            let neighbour = if i + 1 < k { &planes[i + 1] } else { &planes[i - 1] };
            let n = planes[i].normal.into_inner();
            let mut d = neighbour.normal.into_inner() - n * neighbour.normal.dot(&n);
            if d.norm() < 1e-9 {
                return Err(ImplantError::InvalidGeometry(
                    "adjacent cut planes are parallel".into(),
                ));
            }
            d = d.normalize();
            if i + 1 >= k {
                d = -d;
            }
            dirs.push(d);
        }

        // stations: s = 0 at the first hinge; accumulate hinge-to-hinge
        // in-plane widths
        let mut stations = vec![0.0; k];
        stations[1] = 0.0;
        for i in 1..k - 1 {
            stations[i + 1] = stations[i] + (hinges[i] - hinges[i - 1]).dot(&dirs[i]);
        }
        Ok(Self { planes: planes.to_vec(), u, hinges, dirs, stations })
    }

    /// 2D development coordinates of a point lying on (or near) plane `i`.
    fn map(&self, i: usize, p: &Point3<f64>) -> Point2<f64> {
        let h = if i == 0 { self.hinges[0] } else { self.hinges[i - 1] };
        let base = if i == 0 { 0.0 } else { self.stations[i] };
        let s = base + (p - h).dot(&self.dirs[i]);
        let x = (p - self.hinges[0]).dot(&self.u);
        Point2::new(x, s)
    }

    /// Sections the mesh with every plane (nudged outward by `offset`),
    /// clips each section to the plane's band and develops it into 2D.
    fn section_chains(&self, mesh: &TriMesh, offset: f64) -> Vec<Vec<Point2<f64>>> {
        let k = self.planes.len();
        let mut chains = Vec::new();
        for i in 0..k {
            let cut = self.planes[i].offset(offset);
            let loops = section_loops(mesh, &cut);
            // band constraints: stay on the bone side of both neighbours
            let mut constraints: Vec<Plane> = Vec::new();
            if i > 0 {
                constraints.push(self.planes[i - 1].offset(offset));
            }
            if i + 1 < k {
                constraints.push(self.planes[i + 1].offset(offset));
            }
            for lp in loops {
                let mut pieces = vec![(lp, true)];
                for c in &constraints {
                    let mut next = Vec::new();
                    for (pts, closed) in pieces {
                        for piece in clip_chain(&pts, closed, c) {
                            next.push((piece, false));
                        }
                    }
                    pieces = next;
                    if pieces.is_empty() {
                        break;
                    }
                }
                for (pts, _) in pieces {
                    if pts.len() >= 2 {
                        chains.push(pts.iter().map(|p| self.map(i, p)).collect());
                    }
                }
            }
        }
        chains
    }
}

/// Point on the intersection line of two planes, chosen near their anchor
/// points; the line runs along `u`.
fn plane_plane_point(
    a: &Plane,
    b: &Plane,
    _u: &Vector3<f64>,
) -> Result<Point3<f64>, ImplantError> {
    let na = a.normal.into_inner();
    let nb = b.normal.into_inner();
    // seek p = mid + alpha*na + beta*nb with na·(p-pa)=0, nb·(p-pb)=0
    let mid = Point3::from((a.point.coords + b.point.coords) / 2.0);
    let ra = na.dot(&(a.point - mid));
    let rb = nb.dot(&(b.point - mid));
    let c = na.dot(&nb);
    let det = 1.0 - c * c;
    if det.abs() < 1e-12 {
        return Err(ImplantError::InvalidGeometry("parallel cut planes".into()));
    }
    let alpha = (ra - c * rb) / det;
    let beta = (rb - c * ra) / det;
    Ok(mid + na * alpha + nb * beta)
}

/// Clips a polyline (closed if `closed`) to the bone side (`signed ≤ 0`) of
/// a plane, returning open pieces with exact crossing points inserted.
fn clip_chain(pts: &[Point3<f64>], closed: bool, plane: &Plane) -> Vec<Vec<Point3<f64>>> {
    let n = pts.len();
    if n < 2 {
        return Vec::new();
    }
    let count = if closed { n } else { n - 1 };
    let mut pieces: Vec<Vec<Point3<f64>>> = Vec::new();
    let mut current: Vec<Point3<f64>> = Vec::new();
    for e in 0..count {
        let a = pts[e];
        let b = pts[(e + 1) % n];
        let da = plane.signed_distance(&a);
        let db = plane.signed_distance(&b);
        if da <= 0.0 {
            if current.is_empty() {
                current.push(a);
            }
            if db <= 0.0 {
                current.push(b);
            } else {
                let t = da / (da - db);
                current.push(a + (b - a) * t);
                pieces.push(std::mem::take(&mut current));
            }
        } else if db <= 0.0 {
            let t = da / (da - db);
            current = vec![a + (b - a) * t, b];
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    // a closed loop clipped open may wrap around the start; merge the last
    // piece into the first when they share an endpoint
    if closed && pieces.len() > 1 {
        let first_start = pieces[0][0];
        let last_end = *pieces.last().unwrap().last().unwrap();
        if (first_start - last_end).norm() < 1e-9 {
            let mut last = pieces.pop().unwrap();
            last.pop();
            last.extend(pieces[0].drain(..));
            pieces[0] = last;
        }
    }
    pieces.into_iter().filter(|p| p.len() >= 2).collect()
}

/// Joins open 2D chains into one closed polygon, bridging endpoint gaps up
/// to `tol`. Returns the longest closed loop found.
fn close_chains(mut chains: Vec<Vec<Point2<f64>>>, tol: f64) -> Option<Polygon2> {
    chains.retain(|c| c.len() >= 2 && loop_length(c) > 1e-9);
    if chains.is_empty() {
        return None;
    }
    let mut used = vec![false; chains.len()];
    let mut loops: Vec<Vec<Point2<f64>>> = Vec::new();
    for start in 0..chains.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut acc = chains[start].clone();
        loop {
            let tail = *acc.last().unwrap();
            let head = acc[0];
            if acc.len() > 2 && (tail - head).norm() < tol {
                acc.pop();
                break;
            }
            let mut best: Option<(usize, bool, f64)> = None;
            for (i, c) in chains.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let d0 = (c[0] - tail).norm();
                let d1 = (*c.last().unwrap() - tail).norm();
                let (d, rev) = if d0 <= d1 { (d0, false) } else { (d1, true) };
                if d < tol && best.map_or(true, |(_, _, bd)| d < bd) {
                    best = Some((i, rev, d));
                }
            }
            let Some((i, rev, _)) = best else { break };
            used[i] = true;
            let mut piece = chains[i].clone();
            if rev {
                piece.reverse();
            }
            acc.extend(piece);
        }
        if acc.len() >= 3 {
            loops.push(acc);
        }
    }
    loops
        .into_iter()
        .map(|pts| Polygon2 { points: pts })
        .max_by(|a, b| a.perimeter().partial_cmp(&b.perimeter()).unwrap())
}

fn validate_arcs(arcs: &[(f64, f64)]) -> Result<(), ImplantError> {
    for &(a, b) in arcs {
        if !(0.0..1.0).contains(&a) || !(0.0..1.0).contains(&b) {
            return Err(ImplantError::InvalidGeometry(format!(
                "excluded arc ({a}, {b}) outside [0, 1)"
            )));
        }
    }
    Ok(())
}

fn in_arc(t: f64, arc: (f64, f64)) -> bool {
    let (a, b) = arc;
    if a <= b {
        (a..=b).contains(&t)
    } else {
        t >= a || t <= b
    }
}

/// Signed over/under-hang of the implant contour against the bone contour.
///
/// The implant contour is canonicalized (counter-clockwise, starting at its
/// lexicographically smallest vertex) and sampled densely by arc length;
/// samples inside an excluded arc are skipped. Positive distances mean the
/// implant overhangs the bone contour, negative means under-coverage.
/// Distances below 1e-9 mm are reported as exactly zero.
pub fn over_under_hang(pair: &ContourPair) -> HangProfile {
    let implant = pair.implant.canonical();
    let bone = &pair.bone;
    let perim = implant.perimeter();
    let n = ((perim / SAMPLE_STEP).ceil() as usize).max(8);
    let mut profile = Vec::new();
    let mut sum_sq = 0.0;
    let mut hd = 0.0_f64;
    for i in 0..n {
        let t = i as f64 / n as f64;
        if pair.excluded_arcs.iter().any(|&arc| in_arc(t, arc)) {
            continue;
        }
        let p = implant.point_at(t);
        let mut d = bone.signed_distance(&p);
        if d.abs() < 1e-9 {
            d = 0.0;
        }
        sum_sq += d * d;
        hd = hd.max(d.abs());
        profile.push((t, d));
    }
    let rmse = if profile.is_empty() { 0.0 } else { (sum_sq / profile.len() as f64).sqrt() };
    HangProfile { rmse, hausdorff: hd, profile }
}

/// Normalized arc-length intervals (canonical parameterization) of the
/// contour lying beyond the line through `point` with outward direction
/// `outward` — a helper for building excluded zones such as the tibial
/// posterior straight cut.
pub fn arcs_beyond_line(
    contour: &Polygon2,
    point: Point2<f64>,
    outward: Vector2<f64>,
    margin: f64,
) -> Vec<(f64, f64)> {
    let poly = contour.canonical();
    let perim = poly.perimeter();
    let n = poly.points.len();
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + (poly.points[(i + 1) % n] - poly.points[i]).norm();
    }
    // edge by edge: positive g means "beyond the line"; crossings are
    // interpolated so the reported intervals are exact on the polyline
    let g: Vec<f64> = poly
        .points
        .iter()
        .map(|p| outward.dot(&(p - point)) + margin)
        .collect();
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        let (g0, g1) = (g[i], g[(i + 1) % n]);
        let (t0, t1) = (cum[i] / perim, cum[i + 1] / perim);
        let span = if g0 > 0.0 && g1 > 0.0 {
            Some((t0, t1))
        } else if g0 > 0.0 {
            Some((t0, t0 + (t1 - t0) * g0 / (g0 - g1)))
        } else if g1 > 0.0 {
            Some((t0 + (t1 - t0) * g0 / (g0 - g1), t1))
        } else {
            None
        };
        if let Some((a, b)) = span {
            match arcs.last_mut() {
                Some(last) if (last.1 - a).abs() < 1e-12 => last.1 = b,
                _ => arcs.push((a, b)),
            }
        }
    }
    // merge a wrap-around pair (arc ending at 1 with one starting at 0)
    if arcs.len() >= 2 {
        let first = arcs[0];
        let last = *arcs.last().unwrap();
        if first.0 <= 1e-12 && (last.1 - 1.0).abs() < 1e-12 {
            arcs[0] = (last.0, first.1);
            arcs.pop();
        }
    }
    for arc in &mut arcs {
        arc.0 = arc.0.clamp(0.0, 0.999_999);
        arc.1 = arc.1.clamp(0.0, 0.999_999);
    }
    arcs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::implant::ComponentKind;
    use nalgebra::Unit;

    fn square(side: f64) -> Polygon2 {
        let h = side / 2.0;
        Polygon2 {
            points: vec![
                Point2::new(-h, -h),
                Point2::new(h, -h),
                Point2::new(h, h),
                Point2::new(-h, h),
            ],
        }
    }

    fn circle(r: f64, n: usize) -> Polygon2 {
        Polygon2 {
            points: (0..n)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    Point2::new(r * a.cos(), r * a.sin())
                })
                .collect(),
        }
    }

    fn cube_mesh(side: f64) -> TriMesh {
        let h = side / 2.0;
        let vertices: Vec<Point3<f64>> = (0..8)
            .map(|i| {
                Point3::new(
                    if i & 1 == 0 { -h } else { h },
                    if i & 2 == 0 { -h } else { h },
                    if i & 4 == 0 { -h } else { h },
                )
            })
            .collect();
        let quads: [[u32; 4]; 6] = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let mut triangles = Vec::new();
        for [a, b, c, d] in quads {
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
        TriMesh { vertices, triangles }
    }

    #[test]
    fn identical_contours_give_exact_zero() {
        let c = circle(30.0, 400);
        let pair = ContourPair { bone: c.clone(), implant: c, excluded_arcs: vec![] };
        let h = over_under_hang(&pair);
        assert_eq!(h.rmse, 0.0);
        assert_eq!(h.hausdorff, 0.0);
    }

    #[test]
    fn uniform_offset_is_recovered() {
        let bone = circle(30.0, 720);
        let implant = bone.offset(0.5);
        let pair = ContourPair { bone, implant, excluded_arcs: vec![] };
        let h = over_under_hang(&pair);
        assert!((h.rmse - 0.5).abs() / 0.5 < 0.05, "rmse {}", h.rmse);
        assert!((h.hausdorff - 0.5).abs() / 0.5 < 0.05, "hd {}", h.hausdorff);
        // inward offset reads negative
        let bone = circle(30.0, 720);
        let pair = ContourPair {
            bone: bone.clone(),
            implant: bone.offset(-0.5),
            excluded_arcs: vec![],
        };
        let h = over_under_hang(&pair);
        assert!(h.profile.iter().all(|&(_, d)| d < 0.0));
        assert!((h.rmse - 0.5).abs() / 0.5 < 0.05);
    }

    #[test]
    fn excluded_arcs_hide_deviations() {
        let bone = circle(30.0, 720);
        let mut implant = bone.clone();
        // push a run of vertices 3 mm outward; the canonical start is the
        // leftmost vertex (angle 180°), so angles 255°..285° land near
        // canonical parameter 0.21..0.31
        for i in 510..570 {
            let p = implant.points[i];
            implant.points[i] = p + p.coords.normalize() * 3.0;
        }
        let clean = over_under_hang(&ContourPair {
            bone: bone.clone(),
            implant: bone.clone(),
            excluded_arcs: vec![],
        });
        let masked = over_under_hang(&ContourPair {
            bone: bone.clone(),
            implant: implant.clone(),
            excluded_arcs: vec![(0.17, 0.35)],
        });
        assert_eq!(clean.rmse, 0.0);
        assert!(masked.hausdorff < 1e-9, "deviation leaked: {}", masked.hausdorff);
        let unmasked = over_under_hang(&ContourPair {
            bone,
            implant,
            excluded_arcs: vec![],
        });
        assert!(unmasked.hausdorff > 2.0);
    }

    #[test]
    fn metric_is_start_point_invariant() {
        let bone = circle(25.0, 360);
        let mut implant = bone.offset(0.4);
        let h1 = over_under_hang(&ContourPair {
            bone: bone.clone(),
            implant: implant.clone(),
            excluded_arcs: vec![(0.1, 0.2)],
        });
        implant.points.rotate_left(137);
        let h2 = over_under_hang(&ContourPair {
            bone,
            implant,
            excluded_arcs: vec![(0.1, 0.2)],
        });
        assert_eq!(h1.rmse, h2.rmse);
        assert_eq!(h1.hausdorff, h2.hausdorff);
    }

    #[test]
    fn cube_section_is_an_exact_square() {
        let mesh = cube_mesh(20.0);
        let plane = Plane {
            point: Point3::new(0.0, 0.0, 0.3),
            normal: Unit::new_normalize(Vector3::z()),
        };
        let loops = section_loops(&mesh, &plane);
        assert_eq!(loops.len(), 1);
        let poly = largest_loop_2d(loops, &plane.point, &Vector3::x(), &Vector3::y()).unwrap();
        assert!((poly.perimeter() - 80.0).abs() < 0.05, "perimeter {}", poly.perimeter());
        // every section vertex sits on the cube's lateral faces
        for p in &poly.points {
            let m = p.x.abs().max(p.y.abs());
            assert!((m - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn flatten_single_plane_matches_section() {
        let mesh = cube_mesh(20.0);
        let plane = Plane {
            point: Point3::new(0.0, 0.0, -2.0),
            normal: Unit::new_normalize(Vector3::z()),
        };
        let comp = ImplantComponent {
            kind: ComponentKind::TibialBaseplate,
            mesh: mesh.clone(),
            frame: RigidTransform::identity(),
        };
        let pair = flatten_contours(&mesh, &comp, &plane, &[]).unwrap();
        let h = over_under_hang(&pair);
        // implant section sits 0.2 mm off the bone section plane on a
        // vertical wall, so the contours coincide
        assert!(h.hausdorff < 0.05, "hd {}", h.hausdorff);
    }

    #[test]
    fn polygon_offset_and_clip_behave() {
        let sq = square(10.0);
        assert!((sq.signed_area() - 100.0).abs() < 1e-9);
        let grown = sq.offset(1.0);
        assert!((grown.signed_area() - 144.0).abs() < 1e-9);
        let clipped = sq.clip_half_plane(Point2::new(0.0, 2.0), Vector2::new(0.0, -1.0));
        assert!((clipped.signed_area() - 70.0).abs() < 1e-9);
        assert!(sq.contains(&Point2::new(0.0, 0.0)));
        assert!(!sq.contains(&Point2::new(6.0, 0.0)));
        assert!((sq.signed_distance(&Point2::new(0.0, 0.0)) + 5.0).abs() < 1e-9);
        assert!((sq.signed_distance(&Point2::new(7.0, 0.0)) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn arcs_beyond_line_finds_the_masked_span() {
        let c = circle(20.0, 720);
        // everything with y < -15 (posterior arc)
        let arcs = arcs_beyond_line(&c, Point2::new(0.0, -15.0), Vector2::new(0.0, -1.0), 0.0);
        assert!(!arcs.is_empty());
        let poly = c.canonical();
        for i in 0..720 {
            let t = i as f64 / 720.0;
            let p = poly.point_at(t);
            let beyond = p.y < -15.0 - 1e-6;
            let masked = arcs.iter().any(|&a| in_arc(t, a));
            if beyond {
                assert!(masked, "t={t} beyond but not masked");
            }
        }
    }
}

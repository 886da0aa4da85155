//! Bilinear plane-stress quadrilateral, St. Venant–Kirchhoff material,
//! total-Lagrangian kinematics.
//!
//! Local node order is counter-clockwise from the lower-left corner, which
//! matches [`MeshTopology::quads`](crate::mesh::MeshTopology::quads).

use super::MaterialLEM;

const NAT: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Shape function derivatives w.r.t. the natural coordinates at `(xi, eta)`.
fn dn_dnat(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    let mut d = [[0.0; 2]; 4];
    for (a, [sa, ta]) in NAT.iter().enumerate() {
        d[a] = [0.25 * sa * (1.0 + ta * eta), 0.25 * ta * (1.0 + sa * xi)];
    }
    d
}

/// Reference-configuration data at one integration point.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    /// `dN_a/dX`, `dN_a/dY` for the four nodes.
    pub dn: [[f64; 2]; 4],
    /// Quadrature weight times Jacobian determinant (an area).
    pub area: f64,
}

/// Maps natural-coordinate derivatives to the reference configuration.
/// Returns `None` when the reference element is degenerate or inverted.
fn quad_point(xref: &[[f64; 2]; 4], xi: f64, eta: f64, weight: f64) -> Option<QuadPoint> {
    let dnat = dn_dnat(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += xref[a][r] * dnat[a][c];
            }
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det <= 0.0 {
        return None;
    }
    // dN/dX = J^{-T} dN/dxi
    let inv = [
        [j[1][1] / det, -j[0][1] / det],
        [-j[1][0] / det, j[0][0] / det],
    ];
    let mut dn = [[0.0; 2]; 4];
    for a in 0..4 {
        dn[a] = [
            inv[0][0] * dnat[a][0] + inv[1][0] * dnat[a][1],
            inv[0][1] * dnat[a][0] + inv[1][1] * dnat[a][1],
        ];
    }
    Some(QuadPoint {
        dn,
        area: weight * det,
    })
}

/// 2x2 Gauss points of an element, or `None` if the reference shape is invalid.
pub fn gauss_points(xref: &[[f64; 2]; 4]) -> Option<[QuadPoint; 4]> {
    let g = 1.0 / 3f64.sqrt();
    let mut out = [QuadPoint {
        dn: [[0.0; 2]; 4],
        area: 0.0,
    }; 4];
    for (k, [s, t]) in NAT.iter().enumerate() {
        out[k] = quad_point(xref, s * g, t * g, 1.0)?;
    }
    Some(out)
}

pub fn centroid_point(xref: &[[f64; 2]; 4]) -> Option<QuadPoint> {
    quad_point(xref, 0.0, 0.0, 4.0)
}

/// Deformation gradient `F = I + sum_a u_a dN_a/dX` from nodal
/// displacements, so a zero displacement gives exactly `I`.
pub fn deformation_gradient(qp: &QuadPoint, disp: &[[f64; 2]; 4]) -> [[f64; 2]; 2] {
    let mut f = [[1.0, 0.0], [0.0, 1.0]];
    for a in 0..4 {
        for i in 0..2 {
            for jj in 0..2 {
                f[i][jj] += disp[a][i] * qp.dn[a][jj];
            }
        }
    }
    f
}

pub fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Green-Lagrange strain `(E_xx, E_yy, E_xy)` (tensor shear component).
pub fn green_strain(f: &[[f64; 2]; 2]) -> [f64; 3] {
    let c00 = f[0][0] * f[0][0] + f[1][0] * f[1][0];
    let c11 = f[0][1] * f[0][1] + f[1][1] * f[1][1];
    let c01 = f[0][0] * f[0][1] + f[1][0] * f[1][1];
    [0.5 * (c00 - 1.0), 0.5 * (c11 - 1.0), 0.5 * c01]
}

/// Second Piola-Kirchhoff stress from Green strain under plane stress.
pub fn pk2_stress(e: &[f64; 3], mat: &MaterialLEM) -> [f64; 3] {
    let nu = mat.poisson_ratio;
    let c = mat.young_modulus / (1.0 - nu * nu);
    [
        c * (e[0] + nu * e[1]),
        c * (e[1] + nu * e[0]),
        c * (1.0 - nu) * e[2],
    ]
}

/// Cauchy stress `F S F^T / det F` as `(s_xx, s_yy, s_xy)`.
pub fn cauchy_stress(f: &[[f64; 2]; 2], s: &[f64; 3]) -> [f64; 3] {
    let sm = [[s[0], s[2]], [s[2], s[1]]];
    let mut fs = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            fs[i][j] = f[i][0] * sm[0][j] + f[i][1] * sm[1][j];
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = fs[i][0] * f[j][0] + fs[i][1] * f[j][1];
        }
    }
    let j = det2(f);
    [out[0][0] / j, out[1][1] / j, out[0][1] / j]
}

/// Why an element could not be evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inverted {
    pub det_f: f64,
}

/// Internal nodal forces `[f0x, f0y, f1x, ...]` for nodal displacements.
pub fn internal_force(
    gps: &[QuadPoint; 4],
    disp: &[[f64; 2]; 4],
    mat: &MaterialLEM,
) -> Result<[f64; 8], Inverted> {
    let mut out = [0.0; 8];
    for qp in gps {
        let f = deformation_gradient(qp, disp);
        let det_f = det2(&f);
        if det_f <= 0.0 {
            return Err(Inverted { det_f });
        }
        let s = pk2_stress(&green_strain(&f), mat);
        // first Piola-Kirchhoff P = F S
        let p = [
            [
                f[0][0] * s[0] + f[0][1] * s[2],
                f[0][0] * s[2] + f[0][1] * s[1],
            ],
            [
                f[1][0] * s[0] + f[1][1] * s[2],
                f[1][0] * s[2] + f[1][1] * s[1],
            ],
        ];
        let w = qp.area * mat.thickness;
        for a in 0..4 {
            let [dx, dy] = qp.dn[a];
            out[2 * a] += w * (p[0][0] * dx + p[0][1] * dy);
            out[2 * a + 1] += w * (p[1][0] * dx + p[1][1] * dy);
        }
    }
    Ok(out)
}

/// Stored elastic energy of one element.
pub fn strain_energy(gps: &[QuadPoint; 4], disp: &[[f64; 2]; 4], mat: &MaterialLEM) -> f64 {
    gps.iter()
        .map(|qp| {
            let e = green_strain(&deformation_gradient(qp, disp));
            let s = pk2_stress(&e, mat);
            0.5 * (s[0] * e[0] + s[1] * e[1] + 2.0 * s[2] * e[2]) * qp.area * mat.thickness
        })
        .sum()
}

/// Small-strain stiffness `sum B^T D B`, DOF order `[u0x, u0y, u1x, ...]`.
pub fn linear_stiffness(gps: &[QuadPoint; 4], mat: &MaterialLEM) -> [[f64; 8]; 8] {
    let nu = mat.poisson_ratio;
    let c = mat.young_modulus / (1.0 - nu * nu);
    let d = [
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, c * (1.0 - nu) / 2.0],
    ];
    let mut k = [[0.0; 8]; 8];
    for qp in gps {
        // engineering strain rows (e_xx, e_yy, gamma_xy)
        let mut b = [[0.0; 8]; 3];
        for a in 0..4 {
            let [dx, dy] = qp.dn[a];
            b[0][2 * a] = dx;
            b[1][2 * a + 1] = dy;
            b[2][2 * a] = dy;
            b[2][2 * a + 1] = dx;
        }
        let w = qp.area * mat.thickness;
        for r in 0..8 {
            for s in 0..8 {
                let mut acc = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        acc += b[p][r] * d[p][q] * b[q][s];
                    }
                }
                k[r][s] += w * acc;
            }
        }
    }
    k
}

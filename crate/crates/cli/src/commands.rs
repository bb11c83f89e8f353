use std::fs;
use std::path::Path;

use htype::algebra::{format_rational, parse_rational, rational_to_f64, GroupJson};
use htype::geometry::{self, GeodesicCoords};
use htype::heat_kernel::{KernelEvaluator, QuadratureConfig};
use htype::polynomial::{PolyCalculus, Polynomial};
use htype::verification::{
    bump_field, gaussian_field, optimal_constant_experiment, EstimateReport, GeodesicGrid, OptimalConstantRecord,
    TestFunctionFamily, Verifier,
};
use htype::{HTypeGroup, Point, ScalarField};
use serde::Serialize;

use crate::args::*;
use crate::output::{csv_text, emit, fmt_f64, timestamp, to_json};
use crate::CliError;

/// Identity residuals must stay below this.
pub const IDENTITY_TOLERANCE: f64 = 1e-4;

pub fn parse_group(spec: &str) -> Result<HTypeGroup, CliError> {
    if let Some((name, arg)) = spec.split_once(':') {
        let k: usize = arg
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("--group: bad parameter in '{spec}'")))?;
        return match name.trim() {
            "heisenberg" => Ok(HTypeGroup::heisenberg(k)?),
            "quaternionic" => Ok(HTypeGroup::quaternionic(k)?),
            other => Err(CliError::Usage(format!("--group: unknown builtin '{other}'"))),
        };
    }
    let text = fs::read_to_string(spec).map_err(|e| CliError::Usage(format!("--group: cannot read '{spec}': {e}")))?;
    Ok(HTypeGroup::from_json_str(&text)?)
}

fn parse_real(flag: &str, s: &str) -> Result<f64, CliError> {
    if let Ok(v) = s.trim().parse::<f64>() {
        return Ok(v);
    }
    parse_rational(s)
        .map(|q| rational_to_f64(&q))
        .map_err(|_| CliError::Usage(format!("{flag}: cannot parse '{s}' as a number")))
}

fn parse_vec(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|p| parse_real(flag, p)).collect()
}

fn config(q: &QuadArgs) -> Result<QuadratureConfig, CliError> {
    let mut c = QuadratureConfig::default();
    if let Some(v) = q.rel_tol {
        c.rel_tol = v;
    }
    if let Some(v) = q.abs_tol {
        c.abs_tol = v;
    }
    if let Some(v) = q.max_subdivisions {
        c.max_subdivisions = v;
    }
    if let Some(v) = q.sphere_degree {
        c.sphere_rule_degree = v;
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

fn point(group: &HTypeGroup, x: &str, z: &str) -> Result<Point, CliError> {
    let p = Point::new(parse_vec("--x", x)?, parse_vec("--z", z)?);
    group
        .check_point(&p)
        .map_err(|e| CliError::Usage(format!("--x/--z: {e}")))?;
    Ok(p)
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    emit(out, &to_json(value)?)?;
    Ok(())
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Group(c) => group(c),
        Command::Kernel(c) => kernel(c),
        Command::Geodesy(c) => geodesy(c),
        Command::Poly(c) => poly(c),
        Command::Verify(a) => verify(a),
    }
}

#[derive(Serialize)]
struct Validation {
    n: usize,
    m: usize,
    homogeneous_dimension: usize,
    skew_residual: f64,
    square_residual: f64,
    anticommutation_residual: f64,
    exact: bool,
}

fn group(cmd: GroupCmd) -> Result<(), CliError> {
    match cmd {
        GroupCmd::Validate { file, group } => {
            let g = match file {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| CliError::Usage(format!("--file: cannot read {}: {e}", path.display())))?;
                    HTypeGroup::from_json_str(&text)?
                }
                None => parse_group(&group.group)?,
            };
            let r = g.axiom_residuals();
            print_json(
                &Validation {
                    n: g.n(),
                    m: g.m(),
                    homogeneous_dimension: g.homogeneous_dimension(),
                    skew_residual: r.skew,
                    square_residual: r.square,
                    anticommutation_residual: r.anticommutation,
                    exact: g.j_exact().is_some(),
                },
                None,
            )
        }
        GroupCmd::Export { group, out } => {
            let g = parse_group(&group.group)?;
            let doc: GroupJson = g.to_json();
            print_json(&doc, out.as_deref())
        }
    }
}

#[derive(Serialize)]
struct KernelOut {
    t: f64,
    x: Vec<f64>,
    z: Vec<f64>,
    value: f64,
    error_estimate: f64,
    grad: Vec<f64>,
    grad_z: Vec<f64>,
    grad_hat: Vec<f64>,
}

fn kernel(cmd: KernelCmd) -> Result<(), CliError> {
    match cmd {
        KernelCmd::Eval { group, quad, t, x, z } => {
            let g = parse_group(&group.group)?;
            let t = parse_real("--t", &t)?;
            let p = point(&g, &x, &z)?;
            let e = KernelEvaluator::new(g, config(&quad)?)?;
            let k = e.kernel_gradients(t, &p)?;
            print_json(
                &KernelOut {
                    t,
                    x: p.x.clone(),
                    z: p.z.clone(),
                    value: k.value,
                    error_estimate: k.error,
                    grad: k.grad,
                    grad_z: k.grad_z,
                    grad_hat: k.grad_hat,
                },
                None,
            )
        }
        KernelCmd::Mass { group, quad, t } => {
            let g = parse_group(&group.group)?;
            let t = parse_real("--t", &t)?;
            let e = KernelEvaluator::new(g, config(&quad)?)?;
            let mass = e.mass(t)?;
            #[derive(Serialize)]
            struct Mass {
                t: f64,
                mass: f64,
                deviation: f64,
            }
            print_json(
                &Mass {
                    t,
                    mass,
                    deviation: mass - 1.0,
                },
                None,
            )
        }
        KernelCmd::Grid {
            group,
            quad,
            t,
            r_max,
            zeta_max,
            nr,
            nz,
            out,
        } => {
            let g = parse_group(&group.group)?;
            let t = parse_real("--t", &t)?;
            if nr < 2 || nz < 2 || !(r_max > 0.0) || !(zeta_max > 0.0) {
                return Err(CliError::Usage("--nr/--nz need at least 2 points and positive extents".into()));
            }
            let e = KernelEvaluator::new(g, config(&quad)?)?;
            let mut rows = Vec::with_capacity(nr * nz);
            for i in 0..nr {
                let r = r_max * i as f64 / (nr - 1) as f64;
                for j in 0..nz {
                    let zeta = zeta_max * j as f64 / (nz - 1) as f64;
                    let k = e.radial(t, r, zeta)?;
                    let err = k.error.iter().cloned().fold(0.0, f64::max);
                    rows.push([r, zeta, k.p, k.a, k.b, err].iter().map(|v| fmt_f64(*v)).collect());
                }
            }
            let text = csv_text(&["r", "zeta", "p", "grad_x_coeff", "grad_z_coeff", "error_estimate"], &rows)?;
            emit(out.as_deref(), &text)?;
            Ok(())
        }
    }
}

fn geodesy(cmd: GeodesyCmd) -> Result<(), CliError> {
    match cmd {
        GeodesyCmd::Dist { group, x, z, x2, z2 } => {
            let g = parse_group(&group.group)?;
            let a = point(&g, &x, &z)?;
            let d = match (x2, z2) {
                (Some(x2), Some(z2)) => geometry::cc_distance(&g, &a, &point(&g, &x2, &z2)?)?,
                _ => geometry::cc_distance_from_identity(&a),
            };
            #[derive(Serialize)]
            struct Dist {
                distance: f64,
            }
            print_json(&Dist { distance: d }, None)
        }
        GeodesyCmd::Phi { group, u, eta } => {
            let g = parse_group(&group.group)?;
            let c = GeodesicCoords::new(parse_vec("--u", &u)?, parse_vec("--eta", &eta)?)?;
            let p = geometry::phi(&g, &c)?;
            #[derive(Serialize)]
            struct Phi {
                x: Vec<f64>,
                z: Vec<f64>,
                distance: f64,
            }
            print_json(
                &Phi {
                    distance: c.length(),
                    x: p.x,
                    z: p.z,
                },
                None,
            )
        }
        GeodesyCmd::PhiInv { group, x, z } => {
            let g = parse_group(&group.group)?;
            let p = point(&g, &x, &z)?;
            let c = geometry::phi_inverse(&g, &p)?;
            #[derive(Serialize)]
            struct PhiInv {
                u: Vec<f64>,
                eta: Vec<f64>,
                distance: f64,
                region: String,
            }
            let region = geometry::region_classify(&c)
                .map(|r| r.to_string())
                .unwrap_or_else(|_| "B".into());
            print_json(
                &PhiInv {
                    distance: c.length(),
                    u: c.u,
                    eta: c.eta,
                    region,
                },
                None,
            )
        }
        GeodesyCmd::Jacobian { group, r, rho } => {
            let g = parse_group(&group.group)?;
            let a = geometry::jacobian_a(&g, r, rho)?;
            #[derive(Serialize)]
            struct Jac {
                r: f64,
                rho: f64,
                jacobian: f64,
            }
            print_json(&Jac { r, rho, jacobian: a }, None)
        }
    }
}

fn poly(cmd: PolyCmd) -> Result<(), CliError> {
    match cmd {
        PolyCmd::K2 { group, t, poly } => {
            let g = parse_group(&group.group)?;
            let calc = PolyCalculus::new(&g)?;
            let t = parse_rational(&t).map_err(|_| CliError::Usage(format!("--t: '{t}' is not a rational")))?;
            let k2 = match poly {
                Some(s) => calc.squared_gradient_ratio(&Polynomial::parse(g.n(), g.m(), &s)?, &t)?,
                None => calc.k2_ratio(&t)?,
            };
            emit(None, &format!("{}\n", format_rational(&k2)))?;
            Ok(())
        }
        PolyCmd::Heat { group, t, poly } => {
            let g = parse_group(&group.group)?;
            let calc = PolyCalculus::new(&g)?;
            let t = parse_rational(&t).map_err(|_| CliError::Usage(format!("--t: '{t}' is not a rational")))?;
            let p = Polynomial::parse(g.n(), g.m(), &poly)?;
            emit(None, &format!("{}\n", calc.heat_semigroup(&p, &t)?))?;
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityEntry {
    pub field: String,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub check: String,
    pub tolerance: f64,
    pub max_residual: f64,
    pub entries: Vec<IdentityEntry>,
    pub failures: Vec<String>,
    pub passed: bool,
}

impl IdentityReport {
    fn new(check: &str) -> Self {
        IdentityReport {
            check: check.into(),
            tolerance: IDENTITY_TOLERANCE,
            max_residual: 0.0,
            entries: Vec::new(),
            failures: Vec::new(),
            passed: true,
        }
    }

    fn push(&mut self, field: &str, r: htype::Result<f64>) {
        match r {
            Ok(v) => {
                if !(v <= self.tolerance) {
                    self.passed = false;
                }
                self.max_residual = self.max_residual.max(v);
                self.entries.push(IdentityEntry {
                    field: field.into(),
                    residual: v,
                });
            }
            Err(e) => {
                self.passed = false;
                self.failures.push(format!("{field}: {e}"));
            }
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    timestamp: u64,
    group: GroupJson,
    check: String,
    t: f64,
    seed: u64,
    refine: u32,
    estimates: Vec<EstimateReport>,
    identities: Vec<IdentityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimal_constant: Option<OptimalConstantRecord>,
    passed: bool,
}

/// Seven family polynomials plus a Gaussian-type field and a compact bump.
fn identity_fields(g: &HTypeGroup, seed: u64) -> Vec<(String, ScalarField)> {
    let mut out = Vec::new();
    if let Ok(fam) = TestFunctionFamily::standard(g, 4, seed) {
        out.extend(fam.members.into_iter().map(|m| (m.name, m.field)));
    }
    out.push(("gaussian".into(), gaussian_field(1.0)));
    let mut cx = vec![0.0; g.horizontal_dim()];
    cx[0] = 0.3;
    let mut cz = vec![0.0; g.m()];
    cz[0] = 0.1;
    out.push(("bump".into(), bump_field(Point::new(cx, cz), 2.0)));
    out
}

fn refined(mut grid: GeodesicGrid, k: u32) -> GeodesicGrid {
    for _ in 0..k {
        grid = grid.doubled();
    }
    grid
}

fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let g = parse_group(&a.group.group)?;
    let t = parse_real("--t", &a.t)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(CliError::Usage(format!("--t: {t} must be positive")));
    }
    let v = Verifier::new(g.clone(), config(&a.quad)?)?;
    let want = |c: Check| a.check == c || a.check == Check::All;
    let mut estimates = Vec::new();
    let mut identities = Vec::new();
    let mut optimal = None;
    let mut passed = true;

    if want(Check::P1) {
        let r = v.check_p1_estimate(&refined(GeodesicGrid::estimates(), a.refine))?;
        passed &= r.passed();
        estimates.push(r);
    }
    if want(Check::Gradients) {
        for r in v.check_gradient_estimates(&refined(GeodesicGrid::estimates(), a.refine))? {
            passed &= r.passed();
            estimates.push(r);
        }
    }
    if want(Check::Jacobian) {
        let r = v.check_a_asymptotics(&refined(GeodesicGrid::jacobian(), a.refine))?;
        passed &= r.passed();
        estimates.push(r);
    }
    if want(Check::Lemma) {
        let qs = v.lemma_exponents();
        for r in v.check_geodesic_integral_lemma_multi(&refined(GeodesicGrid::lemma(), a.refine), &qs)? {
            passed &= r.passed();
            estimates.push(r);
        }
    }
    if want(Check::Commutation) || want(Check::Byparts) {
        let fields = identity_fields(&g, a.seed);
        if want(Check::Commutation) {
            let mut rep = IdentityReport::new("commutation");
            for (name, f) in &fields {
                rep.push(name, v.check_commutation(f, t).map(|c| c.residual));
            }
            passed &= rep.passed;
            identities.push(rep);
        }
        if want(Check::Byparts) {
            let mut left = IdentityReport::new("integration_by_parts_left");
            let mut right = IdentityReport::new("integration_by_parts_right");
            for (name, f) in &fields {
                match v.check_integration_by_parts(f) {
                    Ok(r) => {
                        left.push(name, Ok(r.left));
                        right.push(name, Ok(r.right));
                    }
                    Err(e) => {
                        let msg = format!("{name}: {e}");
                        left.failures.push(msg.clone());
                        right.failures.push(msg);
                        left.passed = false;
                        right.passed = false;
                    }
                }
            }
            passed &= left.passed && right.passed;
            identities.push(left);
            identities.push(right);
        }
    }
    if want(Check::Scan) {
        let fam = TestFunctionFamily::standard(&g, a.family_size, a.seed)?;
        let r = v.scan_gradient_inequality(&fam, t)?;
        passed &= r.finite();
        estimates.push(r);
    }
    if want(Check::Optimal) {
        let rec = optimal_constant_experiment(&g)?;
        passed &= rec.closed_form_verified;
        optimal = Some(rec);
    }

    let report = VerifyReport {
        timestamp: timestamp(),
        group: g.to_json(),
        check: format!("{:?}", a.check).to_lowercase(),
        t,
        seed: a.seed,
        refine: a.refine,
        estimates,
        identities,
        optimal_constant: optimal,
        passed,
    };
    match a.format {
        Format::Json => print_json(&report, a.out.as_deref())?,
        Format::Csv => emit(a.out.as_deref(), &witness_csv(&report.estimates)?)?,
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::SuiteFailed)
    }
}

fn witness_csv(reports: &[EstimateReport]) -> std::io::Result<String> {
    let mut rows = Vec::new();
    for r in reports {
        for (kind, w) in [("argmin", &r.argmin), ("argmax", &r.argmax)] {
            if let Some(w) = w {
                let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
                rows.push(vec![
                    r.estimate_id.clone(),
                    kind.to_string(),
                    w.label.clone(),
                    fmt_f64(w.ratio),
                    opt(w.r),
                    opt(w.rho),
                    w.point.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "),
                ]);
            }
        }
    }
    csv_text(&["estimate_id", "witness", "label", "ratio", "r", "rho", "point"], &rows)
}

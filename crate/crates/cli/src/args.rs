use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(
    name = "htype",
    version,
    about = "H-type groups: heat kernel, Carnot-Caratheodory geometry and gradient-estimate checks",
    long_about = "Numerical and exact tools for H-type groups G = R^{2n} x R^m with product \
                  (x,z)*(x',z') = (x+x', z+z'+1/2[x,x'])."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, validate and export groups.
    #[command(subcommand)]
    Group(GroupCmd),
    /// Heat kernel p_t(x,z) = (2pi)^{-m}(4pi)^{-n} int exp(i<l,z> - |l|coth(t|l|)|x|^2/4) (|l|/sinh(t|l|))^n dl.
    #[command(subcommand)]
    Kernel(KernelCmd),
    /// Geodesic coordinates Phi(u,eta), the Jacobian A and the distance d.
    #[command(subcommand)]
    Geodesy(GeodesyCmd),
    /// Exact polynomial calculus.
    #[command(subcommand)]
    Poly(PolyCmd),
    /// Numerical checks of estimates and identities; writes a JSON report.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Clone)]
pub struct GroupArg {
    /// `heisenberg:N`, `quaternionic:K` or a path to a group JSON file.
    #[arg(long, default_value = "heisenberg:1")]
    pub group: String,
}

#[derive(Debug, Args, Clone, Default)]
pub struct QuadArgs {
    /// Relative tolerance of the kernel quadrature.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Absolute tolerance of the kernel quadrature.
    #[arg(long)]
    pub abs_tol: Option<f64>,
    /// Panel budget of the adaptive kernel quadrature.
    #[arg(long)]
    pub max_subdivisions: Option<usize>,
    /// Polynomial degree integrated exactly by the sphere rules.
    #[arg(long)]
    pub sphere_degree: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum GroupCmd {
    /// Check skew-symmetry, J_j^2 = -I and J_iJ_j + J_jJ_i = 0 for i != j.
    Validate {
        /// Group JSON file to check.
        #[arg(long)]
        file: Option<PathBuf>,
        #[command(flatten)]
        group: GroupArg,
    },
    /// Print the group as JSON `{n, m, J}`.
    Export {
        #[command(flatten)]
        group: GroupArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum KernelCmd {
    /// p_t(g) with grad p = a x + b/2 J_z x, grad_z p = b z and grad_hat p = a x - b/2 J_z x.
    Eval {
        #[command(flatten)]
        group: GroupArg,
        #[command(flatten)]
        quad: QuadArgs,
        /// Time t > 0; decimals or `p/q`.
        #[arg(long)]
        t: String,
        /// Horizontal coordinates, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// Central coordinates, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        z: String,
    },
    /// Total mass int p_t dm, which should be 1.
    Mass {
        #[command(flatten)]
        group: GroupArg,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long, default_value = "1")]
        t: String,
    },
    /// CSV table of p_t on a (|x|, |z|) grid: r, zeta, p, grad_x_coeff, grad_z_coeff, error_estimate.
    Grid {
        #[command(flatten)]
        group: GroupArg,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long, default_value = "1")]
        t: String,
        #[arg(long, default_value_t = 4.0)]
        r_max: f64,
        #[arg(long, default_value_t = 4.0)]
        zeta_max: f64,
        #[arg(long, default_value_t = 21)]
        nr: usize,
        #[arg(long, default_value_t = 21)]
        nz: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GeodesyCmd {
    /// d(0,g), or d(g,h) when the second point is given.
    Dist {
        #[command(flatten)]
        group: GroupArg,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        #[arg(long, allow_hyphen_values = true, requires = "z2")]
        x2: Option<String>,
        #[arg(long, allow_hyphen_values = true, requires = "x2")]
        z2: Option<String>,
    },
    /// Phi(u,eta) = ((1-cos|eta|)u - sin|eta| J_e u, |u|^2(|eta|-sin|eta|)/2 e), e = eta/|eta|.
    Phi {
        #[command(flatten)]
        group: GroupArg,
        #[arg(long, allow_hyphen_values = true)]
        u: String,
        #[arg(long, allow_hyphen_values = true)]
        eta: String,
    },
    /// Inverse of Phi, defined when x != 0 and z != 0; also reports the region.
    PhiInv {
        #[command(flatten)]
        group: GroupArg,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        z: String,
    },
    /// Haar density A(|u|, |eta|) in geodesic coordinates.
    Jacobian {
        #[command(flatten)]
        group: GroupArg,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        rho: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum PolyCmd {
    /// k2(t) = |grad P_t f(0)|^2 / P_t(|grad f|^2)(0), exactly, for f = x1 + z1 x2 unless --poly is given.
    K2 {
        #[command(flatten)]
        group: GroupArg,
        /// Rational time, e.g. `1/3`.
        #[arg(long)]
        t: String,
        /// Polynomial such as `x1 + 2/3 * x2 z1`.
        #[arg(long, allow_hyphen_values = true)]
        poly: Option<String>,
    },
    /// P_t f = sum_k t^k/k! L^k f, exactly.
    Heat {
        #[command(flatten)]
        group: GroupArg,
        #[arg(long)]
        t: String,
        #[arg(long, allow_hyphen_values = true)]
        poly: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    /// p_1 against (1+d^{2n-m-1})/(1+(|x|d)^{n-1/2}) e^{-d^2/4}.
    P1,
    /// |grad p_1|, |grad_z p_1|, |grad_hat p_1| against (1+d)p_1, p_1, (1+d)p_1.
    Gradients,
    /// A(r,rho) against r^{2m} rho^{2(m+n)} (2pi-rho)^{2n-1}.
    Jacobian,
    /// int_1^{2pi/|eta|} p_1(u,t eta) A(u,t|eta|) t^q dt against p_1 A / (|u||eta|)^2.
    Lemma,
    /// grad_hat P_t f(0) = P_t(grad_hat f)(0).
    Commutation,
    /// int (grad f) p_1 = -int (grad p_1) f, and the same for grad_hat.
    Byparts,
    /// |grad P_t f(0)| / P_t(|grad f|)(0) over a polynomial family.
    Scan,
    /// Maximiser of k2(t) and the lower bound sqrt(k2_max) for the best constant.
    Optimal,
    /// Everything above.
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub check: Check,
    #[command(flatten)]
    pub group: GroupArg,
    #[command(flatten)]
    pub quad: QuadArgs,
    /// Time for the commutation and gradient-ratio checks.
    #[arg(long, default_value = "1")]
    pub t: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Number of random polynomials in the scanned family.
    #[arg(long, default_value_t = 20)]
    pub family_size: usize,
    /// Halve the grid spacing this many times.
    #[arg(long, default_value_t = 0)]
    pub refine: u32,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

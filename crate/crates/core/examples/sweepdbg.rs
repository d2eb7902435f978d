// scratch probe (not deliverable)
use larche_core::evolution::{viscosity_sweep, BoundaryLoad, RunConfig};
use larche_core::grid::{Face, FaceSet, GridSpec, ScalarField, VectorField};
use larche_core::material::ModelParams;
use larche_core::minimizer::MinimizerConfig;

fn main() {
    let grid = GridSpec::unit_interval(256).with_gamma({
        let mut s = FaceSet::single(Face::Low(0));
        s.insert(Face::High(0));
        s
    });
    let cfg = RunConfig {
        horizon: 1.0,
        steps: 16,
        grid,
        params: ModelParams { epsilon: 1.0, gamma: 0.35, ..ModelParams::default() },
        c0: ScalarField::from_fn(&grid, |x| 0.01 * (2.0 * std::f64::consts::PI * x[0]).cos()),
        z0: ScalarField::constant(&grid, 1.0),
        load: BoundaryLoad::piecewise_linear(vec![
            (0.0, VectorField::zeros(&grid)),
            (1.0, VectorField::from_fn(&grid, |x, _| 0.02 * x[0])),
        ]).unwrap(),
    };
    let eps_list = [1.0, 0.5, 0.25, 0.125, 0.0625];
    let report = viscosity_sweep(&cfg, &eps_list, &MinimizerConfig::default()).unwrap();
    let names = ["u_linf_h1", "eps14_u_w14", "c_linf_h1", "z_linf_w1p",
                 "cdot_dual", "eps12_cdot", "zdot_l2", "mu_l2h1"];
    let base = report.entries[0].quantities.as_array();
    for entry in &report.entries {
        let q = entry.quantities.as_array();
        print!("eps={:8.4}:", entry.epsilon);
        for (k, v) in q.iter().enumerate() {
            print!(" {}={:.3e}({:.2})", names[k], v, v / base[k].max(1e-30));
        }
        println!(" | reg={:.3e}", entry.quantities.eps_grad_u4);
    }
}

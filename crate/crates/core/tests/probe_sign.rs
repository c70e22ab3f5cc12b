use tracerlab_core::cutoffs::build_cutoffs;
use tracerlab_core::fields::{Branch, VelocityHierarchy};
use tracerlab_core::grid::SpectralGrid;
use tracerlab_core::params::AbsoluteParams;

#[test]
fn probe_sign() {
    let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
    let mut h = VelocityHierarchy::from_schedule(&AbsoluteParams::desk(), 2, family).unwrap();
    h.char_steps_per_mu = 256.0;
    let sg = SpectralGrid::new(256).unwrap();
    let mu2 = h.levels[1].mu;
    let iota = 2i64;
    let anchor = h.anchor_time(1, iota).unwrap();
    let t = anchor + 0.015625 / mu2;
    let x = [0.1_f64, 0.2];
    // exact one-point flow
    let (p, _) = h.flow_point(1, x, t).unwrap();
    println!("glued exact disp at point: ({:.6e}, {:.6e})", p[0] - x[0], p[1] - x[1]);
    // velocity at the point and first-order prediction
    let u = h.velocity_point(1, x, t).unwrap();
    println!("u(x,t) = ({:.6e}, {:.6e}); (anchor-t)*u = ({:.6e}, {:.6e})",
        u[0], u[1], (anchor - t) * u[0], (anchor - t) * u[1]);
    // grid velocity at nearest grid point
    let (ug, vg) = h.velocity_grid(&sg, 1, Branch::U, t).unwrap();
    let j = (0.1_f64 * 256.0).round() as usize;
    let i = (0.2_f64 * 256.0).round() as usize;
    println!("grid u = ({:.6e}, {:.6e})", ug.data[i * 256 + j], vg.data[i * 256 + j]);
    // taylor flow at the same grid point
    let tay = h.taylor_flow(&sg, 1, iota, t, 1).unwrap();
    println!("taylor N*=1 disp = ({:.6e}, {:.6e})",
        tay.disp_x.data[i * 256 + j], tay.disp_y.data[i * 256 + j]);
    let ex = h.exact_flow(256, 1, iota, t).unwrap();
    println!("exact grid disp = ({:.6e}, {:.6e})",
        ex.disp_x.data[i * 256 + j], ex.disp_y.data[i * 256 + j]);
}

use tracerlab_core::cutoffs::build_cutoffs;
use tracerlab_core::fields::VelocityHierarchy;
use tracerlab_core::grid::SpectralGrid;
use tracerlab_core::params::AbsoluteParams;

#[test]
fn probe_grid_row() {
    let family = build_cutoffs(1024, 1.0 / 64.0).unwrap();
    let mut h = VelocityHierarchy::from_schedule(&AbsoluteParams::desk(), 2, family).unwrap();
    h.char_steps_per_mu = 256.0;
    let sg = SpectralGrid::new(256).unwrap();
    let mu2 = h.levels[1].mu;
    let iota = 2i64;
    let anchor = h.anchor_time(1, iota).unwrap();
    let t = anchor + 0.015625 / mu2;
    let tay = h.taylor_flow(&sg, 1, iota, t, 1).unwrap();
    let tay4 = h.taylor_flow(&sg, 1, iota, t, 4).unwrap();
    let ex = h.exact_flow(256, 1, iota, t).unwrap();
    // row i=0 (y=0), a few x positions
    for j in [0usize, 4, 8, 12, 100, 200] {
        println!(
            "j={j}: exact=({:+.4e},{:+.4e}) tay1=({:+.4e},{:+.4e}) tay4=({:+.4e},{:+.4e})",
            ex.disp_x.data[j], ex.disp_y.data[j],
            tay.disp_x.data[j], tay.disp_y.data[j],
            tay4.disp_x.data[j], tay4.disp_y.data[j],
        );
    }
    let d1 = tay.disp_y.max_abs_diff(&ex.disp_y);
    let pos = ex.disp_y.data.iter().zip(tay.disp_y.data.iter()).enumerate()
        .max_by(|a, b| {
            let da = (a.1 .0 - a.1 .1).abs();
            let db = (b.1 .0 - b.1 .1).abs();
            da.partial_cmp(&db).unwrap()
        }).unwrap();
    println!("max diff {d1:.3e} at flat index {} (i={}, j={}): exact={:+.4e} tay={:+.4e}",
        pos.0, pos.0 / 256, pos.0 % 256, pos.1 .0, pos.1 .1);
}

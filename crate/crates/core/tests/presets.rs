use std::collections::BTreeSet;

use olrn_core::credit::CreditSpec;
use olrn_core::harness::experiments::{self, memscale, timing_config};
use olrn_core::harness::{run_grid, GridOptions, Mode};

#[test]
fn every_preset_builds_valid_cells() {
    for name in experiments::NAMES {
        let p = experiments::by_name(name).unwrap();
        let base = p.base.normalized().unwrap();
        let cells = p.axes.cells(&base).unwrap();
        assert!(!cells.is_empty(), "{name}");
        let coords: BTreeSet<_> = cells.iter().map(|c| c.coords.clone()).collect();
        assert_eq!(coords.len(), cells.len(), "{name}: duplicate coordinates");
        for c in &cells {
            c.config.validate().unwrap();
            assert_eq!(c.config.seeds, experiments::SEEDS);
        }
    }
    assert!(experiments::by_name("nope").is_none());
}

#[test]
fn switch_preset_moves_lr_to_the_post_optimizer() {
    let p = experiments::switch_control();
    let cells = p.axes.cells(&p.base.normalized().unwrap()).unwrap();
    for c in cells {
        let Mode::OptimizerSwitch { to } = c.config.mode else { panic!("not a switch cell") };
        assert_eq!(c.coords["lr"], to.lr.to_string());
        assert_eq!(c.coords["switch_to"], to.method.name());
        assert_eq!(c.config.optim.lr, experiments::PRETRAIN_LR);
    }
}

#[test]
fn memscale_rows_cover_every_method_and_size() {
    let rows = memscale(&[16, 64], 4).unwrap();
    assert_eq!(rows.len(), 8);
    for pair in rows.chunks(4) {
        let n = pair[0].n_hidden as u64;
        assert_eq!(pair[0].bytes_sensitivity, n * pair[1].bytes_sensitivity);
    }
    assert!(memscale(&[16], 3).is_err());
}

#[test]
fn timing_runs_are_short_and_uncompanioned() {
    let cfg = timing_config(CreditSpec::trace(0.0), 8, 30).normalized().unwrap();
    let report = run_grid(
        &cfg,
        &Default::default(),
        &GridOptions {
            companions: false,
            ..GridOptions::default()
        },
    )
    .unwrap();
    assert_eq!(report.runs.len(), 1);
    let r = &report.runs[0].result;
    assert_eq!(r.adapt_steps_run, 30);
    assert!(r.step_time() > 0.0);
    assert!(r.recovery_pct.is_none());
}

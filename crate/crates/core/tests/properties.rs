mod common;

use common::{max_abs, small_draw};
use dfm_core::diagnostics::trace_statistic;
use dfm_core::em::{em_fit, EmConfig};
use dfm_core::kalman::{kalman_filter, kalman_smoother, InitState};
use dfm_core::linalg::min_eigenvalue;
use dfm_core::panel::{IdioCov, Panel};
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn smoothing_never_increases_uncertainty(seed in 0u64..10_000, q in 1usize..=3, n in 8usize..30) {
        let d = small_draw(n, 25, 3, q, seed);
        let mut params = d.params.clone();
        params.idio_cov = IdioCov::Diagonal(d.params.idio_cov.diagonal());
        let init = InitState::stationary(&params).unwrap();
        let filt = kalman_filter(&d.panel, &params, &init).unwrap();
        let sm = kalman_smoother(&filt, &d.panel, &params).unwrap();
        for k in 0..25 {
            let ps = &sm.p_smooth[k];
            prop_assert!(max_abs(ps, &ps.transpose()) < 1e-12);
            prop_assert!(min_eigenvalue(ps) > -1e-10);
            prop_assert!(min_eigenvalue(&(&filt.p_filt[k] - ps)) > -1e-10);
            prop_assert!(min_eigenvalue(&(&filt.p_pred[k] - &filt.p_filt[k])) > -1e-10);
        }
    }

    #[test]
    fn trace_statistic_ignores_invertible_recombination(seed in 0u64..10_000, a in -2.0f64..2.0, b in 0.2f64..3.0) {
        let d = small_draw(40, 60, 3, 3, seed);
        let truth = d.factors.values().transpose();
        let est = &truth + DMatrix::from_fn(60, 3, |t, j| ((t * 7 + j * 3) % 11) as f64 * 0.05);
        let mix = DMatrix::from_row_slice(3, 3, &[b, a, 0.0, 0.0, 1.0, a, 0.3, 0.0, 1.5]);
        let s1 = trace_statistic(&truth, &est).unwrap();
        let s2 = trace_statistic(&truth, &(&est * &mix)).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s1));
    }

    #[test]
    fn em_common_component_is_scale_equivariant(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let d = small_draw(30, 40, 2, 2, seed);
        let cfg = EmConfig { epsilon: 1e-300, max_iter: 5, enforce_ascent: false, ..EmConfig::default() };
        let dims = dfm_core::panel::ModelDims::new(30, 40, 2, 2).unwrap();
        let base = em_fit(&d.panel, &dims, &cfg, None).unwrap();
        let scaled_panel = Panel::new(d.panel.data() * scale).unwrap();
        let scaled = em_fit(&scaled_panel, &dims, &cfg, None).unwrap();
        let diff = max_abs(&(base.common_component() * scale), &scaled.common_component());
        prop_assert!(diff < 1e-7 * scale.max(1.0), "diff {diff}");
    }
}

use approx::assert_abs_diff_eq;
use pll_core::datagen::CandidateSet;
use pll_core::harness::{generate, Method, RunConfig};
use pll_core::numerics::Tensor;
use pll_core::pico::{knn_positive_set, noisy_positive_set, Pool, PoolMeta, PrototypeBank, TrainState};
use pll_core::picoplus::{draw_mixup, guess_labels, mixup_batch, picoplus_epoch, select_clean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn clean_selection_order_statistics() {
    let split = select_clean(&[0.9, 0.8, 0.1, 0.05], 0.5).unwrap();
    assert_eq!(split.clean, vec![0, 1]);
    assert_eq!(split.noisy, vec![2, 3]);
    assert_eq!(select_clean(&[0.3, -0.2, 0.7], 1.0).unwrap().clean.len(), 3);
    assert!(select_clean(&[0.1], 0.0).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sims: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let split = select_clean(&sims, 0.6).unwrap();
    assert!((split.clean.len() as i64 - 600).abs() <= 1);
    let lowest_clean = split.clean.iter().map(|&i| sims[i]).fold(f64::INFINITY, f64::min);
    let highest_noisy = split.noisy.iter().map(|&i| sims[i]).fold(f64::NEG_INFINITY, f64::max);
    assert!(lowest_clean > highest_noisy);
}

fn pm(label: usize, full: usize, clean: bool) -> PoolMeta {
    PoolMeta {
        label,
        full_label: full,
        clean,
        candidates: CandidateSet::from_labels([label]),
        example: 0,
    }
}

#[test]
fn noisy_positive_sets() {
    // Anchor 0 is noisy: its unrestricted prediction (3) is outside Y.
    let pool = Pool {
        batch: 1,
        meta: vec![pm(1, 3, false), pm(1, 1, true), pm(3, 3, true), pm(2, 2, true)],
    };
    assert_eq!(noisy_positive_set(0, &pool), vec![2]);
    // A clean anchor matches on its within-set prediction.
    assert_eq!(noisy_positive_set(1, &pool), Vec::<usize>::new());
}

#[test]
fn nearest_neighbour_positives() {
    let pts: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            let a = i as f64 * 0.3;
            vec![a.cos(), a.sin()]
        })
        .collect();
    let pool = Tensor::from_rows(&pts).unwrap();
    let q = [1.0, 0.0];
    assert_eq!(knn_positive_set(&q, &pool, None, 1), vec![0]);
    assert_eq!(knn_positive_set(&q, &pool, None, 5), vec![0, 1, 2, 3, 4]);
    assert_eq!(knn_positive_set(&q, &pool, None, 50).len(), 5);

    let anchor = [0.45f64.cos(), 0.45f64.sin()];
    let mut brute: Vec<(usize, f64)> = pts
        .iter()
        .enumerate()
        .map(|(j, p)| (j, p[0] * anchor[0] + p[1] * anchor[1]))
        .collect();
    brute.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut top: Vec<usize> = brute[..2].iter().map(|x| x.0).collect();
    top.sort_unstable();
    assert_eq!(knn_positive_set(&anchor, &pool, None, 2), top);
    assert!(!knn_positive_set(&anchor, &pool, Some(1), 2).contains(&1));
}

#[test]
fn guessed_labels() {
    let bank = PrototypeBank::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let r = 0.5f64.sqrt();
    let s = guess_labels(&[r, r], &bank, 0.07);
    assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-15);

    let s = guess_labels(&[1.0, 0.0], &bank, 1e-3);
    assert!(s[0] > 0.999);

    // q.mu_0 - q.mu_1 = tau ln 3
    let tau = 0.1;
    let d = tau * 3f64.ln();
    let s = guess_labels(&[0.5 + d, 0.5], &bank, tau);
    assert_abs_diff_eq!(s[0], 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(s[1], 0.25, epsilon = 1e-12);
}

#[test]
fn mixup_degenerate_cases() {
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![1.0, 2.0]]).unwrap();
    let s = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let (xm, sm) = mixup_batch(&x, &s, &[1, 2, 0], &[1.0; 3]).unwrap();
    assert_eq!((xm, sm), (x.clone(), s.clone()));
    // Rows 0 and 2 are identical, so mixing them changes nothing.
    let (xm, sm) = mixup_batch(&x, &s, &[2, 1, 0], &[0.5; 3]).unwrap();
    assert_eq!(xm.row(0), x.row(0));
    assert_eq!(sm.row(0), s.row(0));
    assert!(mixup_batch(&x, &s, &[0, 1], &[0.5; 2]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (perm, sig) = draw_mixup(8, 4.0, &mut rng).unwrap();
    let mut sorted = perm.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    assert!(sig.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn all_clean_run_reduces_noisy_terms() {
    let cfg = RunConfig {
        method: Method::PicoPlus,
        n: 150,
        n_test: 30,
        epochs: 3,
        plus_warmup_epochs: 1,
        knn_enable_epoch: 1,
        delta: 1.0,
        hidden: vec![8],
        d_emb: 8,
        queue_size: Some(64),
        ..RunConfig::default()
    };
    let (train, _) = generate(&cfg).unwrap();
    let mut st = TrainState::new(&train, cfg.encoder_config(train.dim, train.classes), 64, 0).unwrap();
    let (pico, plus, lcfg) = (cfg.pico_config(), cfg.plus_config(), cfg.loop_config(train.len()));
    for epoch in 0..3 {
        let r = picoplus_epoch(&mut st, &train, &pico, &plus, &lcfg, epoch).unwrap();
        if epoch == 0 {
            assert!(r.clean.is_none());
            continue;
        }
        let l = r.losses;
        assert_eq!(r.clean.unwrap().fraction, 1.0);
        assert_eq!(l.l_knn, 0.0);
        assert_eq!(l.l_ncls, 0.0);
        assert_abs_diff_eq!(l.l_ncont, l.l_cont, epsilon = 1e-12);
        let expected = l.l_mix + plus.alpha * l.l_clean + plus.beta * l.l_ncont;
        assert_abs_diff_eq!(l.l_total, expected, epsilon = 1e-12);
    }
}

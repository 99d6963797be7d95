use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;

use genderfuse::baseline::{fit_linear, fit_tfidf, LinearConfig, LossKind, TfidfConfig};
use genderfuse::corpus::{split_folds, Corpus, Gender, GenderPrediction, HbmConstruct, LabeledTweet, UserRecord};
use genderfuse::model::{ArchConfig, DocInput, ModelParams, Variant};
use genderfuse::stats::{build_tables, chi2_sf_df1, chi2_test, odds_ratio_fraction, AnalysisConfig, Table2x2};
use genderfuse::synth::{gen_gender_corpus, GenderSpec};
use genderfuse::tensor::{batch_norm, softmax, BatchNorm, Mode, Tensor};
use genderfuse::textpipe::{build_docs, normalize, pos_tag, tokenize, TextConfig, Vocab};
use genderfuse::train::fold_stats;

fn labeled_corpus(genders: &[bool]) -> Corpus {
    let users = genders
        .iter()
        .enumerate()
        .map(|(i, &m)| UserRecord {
            user_id: format!("u{i}"),
            gender: Some(if m { Gender::Male } else { Gender::Female }),
            tweets: vec![format!("tweet number {i}")],
        })
        .collect();
    Corpus::new(users).unwrap()
}

/// Tweet-like strings built from the pieces normalization reacts to.
fn tweet() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-zA-Z]{1,8}",
        "[A-Z]{2,6}",
        "[a-z]{1,4}(a|o|e){3,5}",
        "#[A-Za-z]{1,8}",
        "@[a-z0-9_]{1,8}",
        "https?://[a-z]{1,6}\\.com/[a-z0-9]{0,4}",
        "[0-9]{1,5}(\\.[0-9]{1,2})?",
        "(!|\\?|\\.){1,4}",
        Just(":)".to_string()),
        Just(":-(".to_string()),
        Just(":D".to_string()),
        Just("<3".to_string()),
        Just(":|".to_string()),
        Just("<url>".to_string()),
        "[ -~]{1,3}",
    ];
    prop::collection::vec(piece, 0..12).prop_map(|v| v.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalize_is_idempotent(s in tweet()) {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn normalize_is_idempotent_on_printable_noise(s in "[ -~]{0,40}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn tokenize_rejoin_is_identity(s in tweet()) {
        let toks = tokenize(&normalize(&s));
        prop_assert!(toks.iter().all(|t| !t.is_empty()));
        prop_assert_eq!(tokenize(&toks.join(" ")), toks.clone());
        prop_assert_eq!(pos_tag(&toks).len(), toks.len());
    }

    #[test]
    fn folds_partition_and_stratify(genders in prop::collection::vec(any::<bool>(), 2..60), k in 2usize..6, seed in any::<u64>()) {
        let corpus = labeled_corpus(&genders);
        let males = genders.iter().filter(|&&m| m).count();
        let per_class = [genders.len() - males, males];
        prop_assume!(k <= genders.len());
        let folds = split_folds(&corpus, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![false; genders.len()];
        for f in &folds {
            for &i in f {
                prop_assert!(!seen[i], "index {} in two folds", i);
                seen[i] = true;
            }
            for (g, &total) in per_class.iter().enumerate() {
                let n = f.iter().filter(|&&i| genders[i] as usize == g).count() as f64;
                prop_assert!((n - total as f64 / k as f64).abs() <= 1.0);
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn corpus_jsonl_round_trip(texts in prop::collection::vec(("[ -~\\u{e9}\\u{1f600}]{0,6}[a-z\\u{4e2d}]", prop::option::of(any::<bool>())), 1..8)) {
        let users: Vec<UserRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, (t, g))| UserRecord {
                user_id: format!("id\"{i}\\x"),
                gender: g.map(|m| if m { Gender::Male } else { Gender::Female }),
                tweets: vec![t.clone(), format!("{t}\n{t}")],
            })
            .collect();
        let corpus = Corpus::new(users).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        corpus.write_jsonl(&path).unwrap();
        prop_assert_eq!(Corpus::read_jsonl(&path).unwrap(), corpus);
    }

    #[test]
    fn odds_ratio_symmetries(a in 1u64..500, b in 1u64..500, c in 1u64..500, d in 1u64..500, k in 1u64..20) {
        let t = Table2x2::new(a, b, c, d);
        let (num, den) = odds_ratio_fraction(&t, false);
        let (snum, sden) = odds_ratio_fraction(&t.swap_genders(), false);
        // Reciprocal: swapped OR is den/num.
        prop_assert_eq!((snum, sden), (den, num));
        for scaled in [Table2x2::new(k * a, k * b, c, d), Table2x2::new(a, b, k * c, k * d)] {
            let (n2, d2) = odds_ratio_fraction(&scaled, false);
            prop_assert_eq!(n2 * den, num * d2);
        }
    }

    #[test]
    fn chi2_transposition_and_monotone(a in 1u64..300, b in 1u64..300, c in 1u64..300, d in 1u64..300, yates in any::<bool>()) {
        let t = Table2x2::new(a, b, c, d);
        let (s, p) = chi2_test(&t, yates).unwrap();
        let (st, pt) = chi2_test(&t.transpose(), yates).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert!((s - st).abs() <= 1e-9 * s.max(1.0));
        prop_assert!((p - pt).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn chi2_sf_strictly_decreasing(x in 0.0f64..60.0, dx in 1e-3f64..5.0) {
        prop_assert!(chi2_sf_df1(x + dx) < chi2_sf_df1(x));
    }

    #[test]
    fn table_totals_match_recount(spec in prop::collection::vec((0usize..12, 2014i32..2017, 0u8..16, 0u8..4), 1..120)) {
        let preds: Vec<GenderPrediction> = (0..12)
            .map(|u| GenderPrediction::new(format!("a{u}"), if u % 3 == 0 { Gender::Female } else { Gender::Male }, vec![0.9]))
            .collect();
        let tweets: Vec<LabeledTweet> = spec
            .iter()
            .enumerate()
            .map(|(i, &(u, year, mask, tpb))| LabeledTweet {
                tweet_id: format!("t{i}"),
                user_id: format!("a{u}"),
                year,
                hbm: HbmConstruct::ALL.iter().enumerate().filter(|(j, _)| mask & (1 << j) != 0).map(|(_, &h)| h).collect::<BTreeSet<_>>(),
                tpb: match tpb {
                    0 => Some(genderfuse::corpus::TpbAttitude::Positive),
                    1 => Some(genderfuse::corpus::TpbAttitude::Negative),
                    2 => Some(genderfuse::corpus::TpbAttitude::Neutral),
                    _ => None,
                },
            })
            .collect();
        let tables = build_tables(&tweets, &preds, &AnalysisConfig::default()).unwrap();
        let years: BTreeSet<i32> = tweets.iter().map(|t| t.year).collect();
        prop_assert_eq!(tables.len(), 5 * years.len());
        for t in &tables {
            let of_year: Vec<&LabeledTweet> = tweets.iter().filter(|w| w.year == t.year).collect();
            let male = |w: &&LabeledTweet| w.user_id[1..].parse::<usize>().unwrap() % 3 != 0;
            let n_male = of_year.iter().copied().filter(male).count() as u64;
            prop_assert_eq!(t.cells.a + t.cells.b, n_male);
            prop_assert_eq!(t.cells.c + t.cells.d, of_year.len() as u64 - n_male);
            let in_male = of_year.iter().copied().filter(male).filter(|w| t.construct.holds(w)).count() as u64;
            prop_assert_eq!(t.cells.a, in_male);
            prop_assert!(t.odds_ratio > 0.0);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-30.0f64..30.0, 2..40)) {
        let rows = v.len() / 2;
        let p = softmax(&Tensor::new(vec![rows, 2], v[..rows * 2].to_vec()).unwrap()).unwrap();
        for r in 0..rows {
            let row = p.row(r);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_standardizes(v in prop::collection::vec(-5.0f64..5.0, 24..60)) {
        let b = v.len() / 3;
        let x = Tensor::new(vec![b, 3], v[..b * 3].to_vec()).unwrap();
        // Near-constant columns have no meaningful unit variance.
        for j in 0..3 {
            let col: Vec<f64> = (0..b).map(|r| x.row(r)[j]).collect();
            let m = col.iter().sum::<f64>() / b as f64;
            prop_assume!(col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / b as f64 > 0.1);
        }
        let (y, _) = batch_norm(&x, &BatchNorm::new(3, 0.9, 1e-5), Mode::Train).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..b).map(|r| y.row(r)[j]).collect();
            let m = col.iter().sum::<f64>() / b as f64;
            let var = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / b as f64;
            prop_assert!(m.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn fold_stats_bounds(xs in prop::collection::vec(0.0f64..=1.0, 1..10)) {
        let (mean, sd) = fold_stats(&xs);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mean >= lo - 1e-12 && mean <= hi + 1e-12);
        prop_assert!(sd >= 0.0);
        prop_assert_eq!(sd == 0.0, lo == hi);
    }

    #[test]
    fn prediction_average_is_mean(probs in prop::collection::vec(0.0f64..=1.0, 1..8)) {
        let p = GenderPrediction::new("x", Gender::Female, probs.clone());
        prop_assert!((p.avg_prob - probs.iter().sum::<f64>() / probs.len() as f64).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tfidf_rows_are_unit_and_idf_positive(seed in any::<u64>(), users in 4usize..12) {
        let corpus = gen_gender_corpus(&GenderSpec { users_per_class: users, tweets_per_user: 4, vocab_size: 40, seed, ..Default::default() }).unwrap();
        let docs = genderfuse::baseline::token_lists(&corpus);
        let m = fit_tfidf(&docs, &TfidfConfig::default()).unwrap();
        prop_assert!(m.idf.iter().all(|&w| w.is_finite() && w > 0.0));
        let cols: HashSet<u32> = m.terms.iter().map(|t| m.column(t).unwrap()).collect();
        prop_assert_eq!(cols, (0..m.n_columns() as u32).collect::<HashSet<_>>());
        let x: Vec<_> = docs.iter().map(|d| m.transform(d)).collect();
        for row in &x {
            let n: f64 = row.iter().map(|(_, v)| v * v).sum();
            prop_assert!(row.is_empty() || (n - 1.0).abs() < 1e-12);
        }
        let labels = corpus.labels().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let lr = fit_linear(&x, &labels, m.n_columns(), LossKind::Logistic, &LinearConfig::default(), &mut rng).unwrap();
        for row in &x {
            let [p0, p1] = lr.predict_proba(row);
            prop_assert!(p0 > 0.0 && p1 > 0.0 && p0 < 1.0 && p1 < 1.0);
            prop_assert!((p0 + p1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_audit(
        variant in prop::sample::select(Variant::ALL.to_vec()),
        word_dim in 1usize..6, char_dim in 1usize..5, pos_dim in 1usize..4,
        char_filters in 1usize..5, char_width in 1usize..4,
        widths in prop::collection::btree_set(1usize..5, 1..4),
        word_filters in 1usize..6, dense in 1usize..6, seed in any::<u64>(),
    ) {
        let arch = ArchConfig {
            variant, word_dim, char_dim, pos_dim, char_filters,
            char_filter_width: char_width,
            word_filter_widths: widths.iter().copied().collect(),
            word_filters, dense_units: dense,
            ..ArchConfig::tiny(variant)
        };
        arch.validate().unwrap();
        let corpus = gen_gender_corpus(&GenderSpec { users_per_class: 1, tweets_per_user: 2, vocab_size: 20, seed, ..Default::default() }).unwrap();
        let vocab = Vocab::build(&corpus, 1);
        let docs = build_docs(&corpus, &vocab, &TextConfig::default()).unwrap();
        let model = ModelParams::<f64>::init(&arch, &vocab, None, seed).unwrap();
        let expect_fused = word_dim
            + if variant.uses_chars() { char_filters } else { 0 }
            + if variant.uses_pos() { pos_dim } else { 0 };
        prop_assert_eq!(arch.fused_width(), expect_fused);
        prop_assert_eq!(arch.pooled_width(), arch.filters_per_width().iter().sum::<usize>());
        for (d, u) in docs.iter().zip(corpus.users()) {
            let input = DocInput::new(d, &vocab, u.gender).unwrap();
            for seq in &input.char_seqs {
                match model.char_layer(seq) {
                    Ok(c) => prop_assert_eq!(c.shape().to_vec(), vec![char_filters]),
                    Err(_) => prop_assert!(!variant.uses_chars()),
                }
            }
            prop_assert_eq!(model.fused_tokens(&input).unwrap().shape().to_vec(), vec![input.len(), expect_fused]);
            prop_assert_eq!(model.pooled(&input).unwrap().shape().to_vec(), vec![arch.pooled_width()]);
            let p = model.predict(std::slice::from_ref(&input)).unwrap();
            prop_assert!((p[0][0] + p[0][1] - 1.0).abs() < 1e-12);
        }
    }
}

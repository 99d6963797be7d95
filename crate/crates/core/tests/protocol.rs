use genderfuse::baseline::{baseline_cv, token_lists, Algo, LinearConfig, TfidfConfig};
use genderfuse::corpus::{split_folds, Corpus, Gender, UserRecord};
use genderfuse::model::{encode_checkpoint, ArchConfig, DocInput, Variant};
use genderfuse::synth::{gen_gender_corpus, GenderSpec};
use genderfuse::textpipe::{build_docs, TextConfig, Vocab};
use genderfuse::train::{first_argmax, train_cv, CvRun, TrainConfig};

fn tiny_run(corpus: &Corpus, epochs: usize, jobs: usize, seed: u64) -> CvRun {
    let vocab = Vocab::build(corpus, 1);
    let docs: Vec<DocInput> = build_docs(corpus, &vocab, &TextConfig::default())
        .unwrap()
        .iter()
        .zip(corpus.users())
        .map(|(d, u)| DocInput::new(d, &vocab, u.gender).unwrap())
        .collect();
    let cfg = TrainConfig {
        folds: 3,
        epochs,
        seed,
        jobs,
        ..Default::default()
    };
    train_cv(corpus, &docs, &vocab, None, &ArchConfig::tiny(Variant::CnnCharPos), &cfg, None, None).unwrap()
}

/// Letters only, never three alike in a row, so normalization leaves it intact.
fn unique_term(i: usize) -> String {
    let tail: String = format!("{i:03}").bytes().flat_map(|b| [(b - b'0' + b'a') as char, 'x']).collect();
    format!("zzuniq{tail}")
}

fn small_corpus(seed: u64) -> Corpus {
    gen_gender_corpus(&GenderSpec {
        users_per_class: 6,
        tweets_per_user: 3,
        vocab_size: 40,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn best_epoch_is_first_argmax_of_trace() {
    let run = tiny_run(&small_corpus(1), 4, 1, 3);
    assert!(run.failures.is_empty());
    for f in &run.folds {
        assert_eq!(f.val_trace.len(), 4);
        assert_eq!(f.loss_trace.len(), 4);
        assert_eq!(Some(f.best_epoch - 1), first_argmax(&f.val_trace));
        assert!(f.val_trace.iter().all(|a| (0.0..=1.0).contains(a)));
    }
    let one = tiny_run(&small_corpus(1), 1, 1, 3);
    assert!(one.folds.iter().all(|f| f.best_epoch == 1));
}

#[test]
fn fold_results_do_not_depend_on_execution_order() {
    let corpus = small_corpus(2);
    let serial = tiny_run(&corpus, 2, 1, 8);
    let parallel = tiny_run(&corpus, 2, 3, 8);
    assert_eq!(serial.folds, parallel.folds);
    for (a, b) in serial.models.iter().zip(&parallel.models) {
        assert_eq!(encode_checkpoint(a).unwrap(), encode_checkpoint(b).unwrap());
    }
    assert_ne!(serial.folds, tiny_run(&corpus, 2, 1, 9).folds, "seed must matter");
}

#[test]
fn tfidf_sees_only_training_folds() {
    // Every author gets a term nobody else uses; with min_df 1 it becomes a
    // column exactly when the author is in the fold's training split.
    let base = small_corpus(4);
    let users: Vec<UserRecord> = base
        .users()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut u = u.clone();
            u.tweets.push(format!("{0} {0}", unique_term(i)));
            u
        })
        .collect();
    let corpus = Corpus::new(users).unwrap();
    let docs = token_lists(&corpus);
    let tfidf = TfidfConfig {
        min_df: 1,
        ..Default::default()
    };
    let (k, seed) = (3, 21);
    let run = baseline_cv(&corpus, &docs, Algo::Lr, k, seed, &tfidf, &LinearConfig::default(), None).unwrap();
    let splits = split_folds(&corpus, k, seed).unwrap();
    for (fold, model) in run.models.iter().enumerate() {
        for i in 0..corpus.len() {
            let held_out = splits[fold].contains(&i);
            assert_eq!(
                model.tfidf.column(&unique_term(i)).is_none(),
                held_out,
                "fold {fold}, author {i}"
            );
            if held_out {
                let without: Vec<String> = docs[i].iter().filter(|t| !t.starts_with("zzuniq")).cloned().collect();
                assert_eq!(model.tfidf.transform(&docs[i]), model.tfidf.transform(&without));
            }
        }
    }
}

#[test]
fn baseline_is_reproducible_per_seed() {
    let corpus = small_corpus(5);
    let docs = token_lists(&corpus);
    let labels: Vec<Gender> = corpus.labels().unwrap();
    let run = |seed| {
        baseline_cv(&corpus, &docs, Algo::Svm, 3, seed, &TfidfConfig::default(), &LinearConfig::default(), Some((&docs, &labels)))
            .unwrap()
    };
    let (a, b) = (run(1), run(1));
    assert_eq!(a.folds, b.folds);
    for (x, y) in a.models.iter().zip(&b.models) {
        assert_eq!(x.linear.w, y.linear.w);
    }
}

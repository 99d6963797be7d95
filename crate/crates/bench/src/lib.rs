//! Shared inputs for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genderfuse::baseline::token_lists;
use genderfuse::corpus::Corpus;
use genderfuse::model::{ArchConfig, DocInput, ModelParams, Variant};
use genderfuse::synth::{gen_gender_corpus, GenderSpec};
use genderfuse::tensor::Tensor;
use genderfuse::textpipe::{build_docs, TextConfig, Vocab};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n x c` input and `w x c x f` filter bank with values in [-1, 1].
pub fn conv_inputs(n: usize, c: usize, w: usize, f: usize) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    let mut r = rng(1);
    (
        Tensor::uniform(&[n, c], 1.0, &mut r),
        Tensor::uniform(&[w, c, f], 1.0, &mut r),
        Tensor::uniform(&[f], 1.0, &mut r),
    )
}

pub fn corpus(users_per_class: usize, tweets_per_user: usize) -> Corpus {
    gen_gender_corpus(&GenderSpec {
        users_per_class,
        tweets_per_user,
        seed: 3,
        ..Default::default()
    })
    .expect("synthetic corpus")
}

pub fn token_docs(c: &Corpus) -> Vec<Vec<String>> {
    token_lists(c)
}

/// Freshly initialized desk-sized model and the inputs of `c`.
pub fn model_inputs(c: &Corpus, variant: Variant) -> (ModelParams<f32>, Vec<DocInput>) {
    let vocab = Vocab::build(c, 1);
    let docs = build_docs(c, &vocab, &TextConfig::default()).expect("docs");
    let inputs = docs
        .iter()
        .zip(c.users())
        .map(|(d, u)| DocInput::new(d, &vocab, u.gender))
        .collect::<Result<Vec<_>, _>>()
        .expect("inputs");
    let model = ModelParams::init(&ArchConfig::desk(variant), &vocab, None, 5).expect("init");
    (model, inputs)
}

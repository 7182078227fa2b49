//! Whole-network gradient validation and a learning smoke test for the
//! music-to-dance stage. No quantizer sits in this graph, so finite
//! differences see the exact training gradient path end to end: embeddings,
//! both scan directions, the genre gates, and the cross-entropy heads.

use tokendance_core::autodiff::{ParamStore, Tape, Tensor};
use tokendance_core::gradcheck::{max_rel_error, sample_coords};
use tokendance_core::generator::{
    Backbone,
    pool_features, token_accuracy, train_generator, ClipTokens, Generator, GeneratorConfig,
    MusicInput, Stage2Config,
};
use tokendance_core::rng::stream;

use rand::Rng;

fn tiny_cfg(vocab: usize) -> GeneratorConfig {
    GeneratorConfig {
        d_model: 16,
        n_genres: 3,
        music_layers: 1,
        global_layers: 2,
        dance_layers: 1,
        vocab,
        bypass_music_tokens: false,
        backbone: Backbone::BiMamba,
    }
}

#[test]
fn generator_gradient_matches_finite_differences() {
    let vocab = 50; // small codebook keeps the FD loop cheap
    let mut store = ParamStore::<f64>::new();
    let mut rng = stream(21, "stage2-fd-init", 0);
    let gen = Generator::init(&mut store, &mut rng, tiny_cfg(vocab));

    let sem: Vec<u16> = vec![3, 1, 4, 1, 5, 9];
    let ac: Vec<u16> = vec![2, 6, 5, 3, 5, 8];
    let up: Vec<u16> = vec![9, 7, 9, 3, 2, 3];
    let lo: Vec<u16> = vec![8, 4, 6, 2, 6, 4];

    let graph = |st: &ParamStore<f64>| -> tokendance_core::error::Result<f64> {
        let mut tape = Tape::new(st);
        let music = MusicInput::Tokens { sem: &sem, ac: &ac };
        let loss = gen.clip_loss(&mut tape, &music, 1, &up, &lo)?;
        Ok(tape.value(loss).item())
    };

    let grads = {
        let mut tape = Tape::new(&store);
        let music = MusicInput::Tokens { sem: &sem, ac: &ac };
        let loss = gen.clip_loss(&mut tape, &music, 1, &up, &lo).unwrap();
        tape.backward(loss).unwrap()
    };

    let mut pick = stream(21, "stage2-fd-pick", 0);
    let coords = sample_coords(&store, 0.005, &mut pick);
    assert!(coords.len() >= 40, "sample too small: {}", coords.len());
    let worst = max_rel_error(&mut store, &grads, &coords, 1e-5, graph).unwrap();
    assert!(worst < 1e-3, "worst relative FD error {worst:.3e}");
}

#[test]
fn bypass_generator_gradient_matches_finite_differences() {
    let vocab = 50;
    let mut cfg = tiny_cfg(vocab);
    cfg.bypass_music_tokens = true;
    let mut store = ParamStore::<f64>::new();
    let mut rng = stream(22, "bypass-fd-init", 0);
    let gen = Generator::init(&mut store, &mut rng, cfg);

    let mut frng = stream(22, "bypass-fd-feats", 0);
    let feats = Tensor::<f64>::from_vec(
        &[24, tokendance_core::audiofeat::FEAT_DIMS],
        (0..24 * tokendance_core::audiofeat::FEAT_DIMS)
            .map(|_| frng.gen::<f64>() * 2.0 - 1.0)
            .collect(),
    )
    .unwrap();
    let pooled = pool_features(&feats);
    let up: Vec<u16> = vec![9, 7, 9];
    let lo: Vec<u16> = vec![8, 4, 6];

    let graph = |st: &ParamStore<f64>| -> tokendance_core::error::Result<f64> {
        let mut tape = Tape::new(st);
        let loss = gen.clip_loss(&mut tape, &MusicInput::Pooled(&pooled), 0, &up, &lo)?;
        Ok(tape.value(loss).item())
    };
    let grads = {
        let mut tape = Tape::new(&store);
        let loss = gen
            .clip_loss(&mut tape, &MusicInput::Pooled(&pooled), 0, &up, &lo)
            .unwrap();
        tape.backward(loss).unwrap()
    };
    let mut pick = stream(22, "bypass-fd-pick", 0);
    let coords = sample_coords(&store, 0.005, &mut pick);
    let worst = max_rel_error(&mut store, &grads, &coords, 1e-5, graph).unwrap();
    assert!(worst < 1e-3, "worst relative FD error {worst:.3e}");
}

/// A deterministic toy mapping the network can actually learn: dance codes
/// are functions of the music codes at the same position.
fn toy_clips(n: usize, len: usize, vocab: u16) -> Vec<ClipTokens<f32>> {
    (0..n)
        .map(|i| {
            let mut rng = stream(500 + i as u64, "toy-clip", 0);
            let sem: Vec<u16> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            let ac: Vec<u16> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            let up: Vec<u16> = sem.iter().map(|&c| (c + 1) % vocab).collect();
            let lo: Vec<u16> = ac.iter().map(|&c| (c + 2) % vocab).collect();
            ClipTokens {
                genre: i % 3,
                sem,
                ac,
                up,
                lo,
                pooled: None,
            }
        })
        .collect()
}

#[test]
fn generator_training_descends_and_beats_chance() {
    let vocab = 16u16;
    let clips = toy_clips(8, 8, vocab);
    let cfg = Stage2Config {
        model: GeneratorConfig {
            d_model: 16,
            n_genres: 3,
            music_layers: 1,
            global_layers: 1,
            dance_layers: 1,
            vocab: vocab as usize,
            bypass_music_tokens: false,
            backbone: Backbone::BiMamba,
        },
        lr: 3e-3,
        epochs: 30,
        batch: 4,
        seed: 11,
        ..Stage2Config::default()
    };
    let (store, gen, curve) = train_generator(&clips, &cfg).unwrap();
    let first = curve[0].1;
    let last = curve.last().unwrap().1;
    assert!(
        last < first * 0.7,
        "loss should drop >30%: first {first:.4}, last {last:.4}"
    );
    let acc = token_accuracy(&store, &gen, &clips).unwrap();
    assert!(
        acc > 2.0 / vocab as f64,
        "accuracy {acc:.3} no better than chance {:.3}",
        1.0 / vocab as f64
    );
}

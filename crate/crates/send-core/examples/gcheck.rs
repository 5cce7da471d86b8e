use send_core::*;
use send_core::model::*;
use send_core::model::fsmn::FsmnLayerSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;

fn random_tiny_config(rng: &mut ChaCha12Rng) -> ModelConfig {
    let hidden = *[8usize, 12, 16].iter().filter(|&&h| true).nth(rng.gen_range(0..3)).unwrap();
    let heads = if hidden % 2 == 0 { 2 } else { 1 };
    let n = rng.gen_range(2..4u32);
    let f = rng.gen_range(4..9);
    let layers = rng.gen_range(1..3);
    let specs: Vec<FsmnLayerSpec> = (0..layers)
        .map(|_| FsmnLayerSpec::new(rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(1..3)))
        .collect();
    ModelConfig {
        feature_dim: f,
        embed_dim: f,
        hidden_dim: hidden,
        speech_layers: specs.clone(),
        post_layers: vec![FsmnLayerSpec::new(1, 1, 1)],
        speaker_layers: rng.gen_range(1..3),
        ci_scorer: true,
        cd_scorer: CdScorerKind::SelfAttention,
        cd_depth: 1,
        cd_heads: heads,
        cd_ffn_mult: 2,
        head: HeadKind::Pse,
        n_speakers: n,
        max_overlap: n,
    }
}

fn main() {
    let mut good = 0;
    for cfg_seed in 0..24u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(7000 + cfg_seed);
        let config = random_tiny_config(&mut rng);
        let t = rng.gen_range(4..9);
        let store = model::init_params(&config, cfg_seed).unwrap();
        let names: Vec<String> = store.names().map(String::from).collect();
        // O(0.5) point, layer-norm gains near 1
        let tensors: Vec<Tensor> = store.iter().map(|(name, tt)| {
            if name.ends_with("ln1.g") || name.ends_with("ln2.g") {
                Tensor::randn(tt.shape(), 0.2, &mut rng).map(|v| v + 1.0)
            } else {
                Tensor::randn(tt.shape(), 0.5, &mut rng)
            }
        }).collect();
        let features = Tensor::randn(&[t, config.feature_dim], 1.0, &mut rng);
        let embeds = Tensor::randn(&[config.n_speakers as usize, config.embed_dim], 1.0, &mut rng);
        let c = num_classes(config.n_speakers, config.max_overlap).unwrap();
        let targets: Vec<usize> = (0..t).map(|_| rng.gen_range(0..c)).collect();

        // min |analytic grad|
        let min_grad = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = tensors.iter().map(|x| tape.leaf(x.clone())).collect();
            let mut by_name = HashMap::new();
            for (name, var) in names.iter().zip(vars.iter()) { by_name.insert(name.clone(), *var); }
            let bound = BoundParams::from_map(vars.clone(), by_name);
            let x = tape.leaf(features.clone());
            let e = tape.leaf(embeds.clone());
            let logits = model::forward(&mut tape, &bound, &config, x, e).unwrap();
            let loss = tape.cross_entropy(logits, &targets).unwrap();
            tape.backward(loss).unwrap();
            vars.iter().flat_map(|&v| tape.grad(v).into_data()).fold(f64::INFINITY, |m, g| m.min(g.abs()))
        };

        let err = grad_check(
            |tape, vars| {
                let mut by_name = HashMap::new();
                for (name, var) in names.iter().zip(vars.iter()) { by_name.insert(name.clone(), *var); }
                let bound = BoundParams::from_map(vars.to_vec(), by_name);
                let x = tape.leaf(features.clone());
                let e = tape.leaf(embeds.clone());
                let logits = model::forward(tape, &bound, &config, x, e)?;
                tape.cross_entropy(logits, &targets)
            },
            &tensors,
            1e-5,
        ).unwrap();
        let ok = err < 1e-4;
        if ok { good += 1; }
        println!("cfg_seed {cfg_seed}: T={t} h={} n={} err {err:.3e} min|g| {min_grad:.2e} {}", config.hidden_dim, config.n_speakers, if ok {"PASS"} else {"fail"});
    }
    println!("passed {good}/24");
}

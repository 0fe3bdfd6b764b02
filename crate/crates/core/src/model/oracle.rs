use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::synth::World;
use crate::tensor::Tensor;

use super::{Model64, ModelConfig, Result};

/// Hand-set parameters that ground a synthetic world exactly.
///
/// Token vectors pass through the encoder unchanged and their word part is
/// matched against the class block of each visual node. The attribute MLP
/// moves the attribute block into the class block, and the relationship
/// biaffine writes the elementwise product of the source's outgoing block
/// and the destination's incoming block there, so every node's class block
/// holds the one-hot concept of the word that should ground to it.
pub fn oracle_model(world: &World) -> Result<Model64> {
    let k = world.config.concept_dim;
    let d = 4 * k;
    let vocab = world.vocab();
    let emb = world.embeddings();
    let config = ModelConfig {
        word_dim: k,
        tag_dim: 4,
        feat_dim: d,
        attn_dim: 4,
        hidden: 2 * k,
        rel_rank: k,
        arc_rank: 4,
        match_dim: k,
        dec_tag_dim: 4,
        normalize_sim: true,
        finetune_words: false,
        arc_threshold: 0.05,
        second_threshold: 0.05,
        max_second: 32,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut m = Model64::new(config, &vocab, emb.vectors(), &world.tags, &mut rng)?;
    let e = m.config.token_dim();

    let set = |m: &mut Model64, name: &str, f: &dyn Fn(&mut Tensor<f64>)| -> Result<()> {
        let t = m.params.get_mut(name)?;
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        f(t);
        Ok(())
    };
    // relu(x) - relu(-x) = x, copying block `from` of the input into block
    // `to` of the output
    let copy_block = |m: &mut Model64, prefix: &str, from: usize, to: usize, out: usize| -> Result<()> {
        set(m, &format!("{prefix}.0.w"), &|t| {
            for i in 0..k {
                t.data_mut()[(from * k + i) * 2 * k + i] = 1.0;
                t.data_mut()[(from * k + i) * 2 * k + k + i] = -1.0;
            }
        })?;
        set(m, &format!("{prefix}.0.b"), &|_| {})?;
        set(m, &format!("{prefix}.1.w"), &|t| {
            for i in 0..k {
                t.data_mut()[i * out + to * k + i] = 1.0;
                t.data_mut()[(k + i) * out + to * k + i] = -1.0;
            }
        })?;
        set(m, &format!("{prefix}.1.b"), &|_| {})
    };
    copy_block(&mut m, "vis.attr", 1, 0, d)?;
    copy_block(&mut m, "vis.src", 2, 0, k)?;
    copy_block(&mut m, "vis.dst", 3, 0, k)?;
    set(&mut m, "vis.rel.w1", &|t| {
        for i in 0..k {
            t.data_mut()[(i * k + i) * k + i] = 1.0;
        }
    })?;
    set(&mut m, "vis.rel.w2", &|_| {})?;
    set(&mut m, "vis.rel.b", &|_| {})?;
    set(&mut m, "enc.v", &|_| {})?;
    set(&mut m, "match.c", &|t| {
        for i in 0..k {
            t.data_mut()[i * k + i] = 1.0;
        }
    })?;
    set(&mut m, "match.v", &|t| {
        for i in 0..k {
            t.data_mut()[i * k + i] = 1.0;
        }
    })?;
    debug_assert_eq!(m.params.get("match.c")?.shape(), &[e, k]);
    Ok(m)
}

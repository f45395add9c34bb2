//! Assembles a multimodal query: global visual tokens, text-guided pooled
//! patch tokens and, at inference, the text tokens themselves.

use mire::numerics::{Matrix, Rng};
use mire::qap::{assemble_query, Activation, MultimodalQueryInput, PoolingDims, PoolingParams, Stage};

fn main() -> mire::Result<()> {
    let dims = PoolingDims::new(256).with_text_dim(128);
    let params = PoolingParams::init(dims, Activation::Silu, 0)?;
    println!("pooling network: {} parameters", params.param_count());
    let mut rng = Rng::new(1);
    let mut random = |r: usize, c: usize| Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect());
    let e_t = random(6, 128)?;
    let v_m = random(49, 256)?;
    let v_g = random(1, 256)?.into_data();
    let input = MultimodalQueryInput::new("q0", e_t, v_g, v_m);
    for stage in [Stage::Alignment, Stage::Inference] {
        let q = assemble_query(&input, &params, stage)?;
        println!(
            "{stage:?}: {} tokens ({} global + {} pooled{})",
            q.num_tokens(),
            q.e_g().rows(),
            q.e_m().rows(),
            if stage == Stage::Inference { format!(" + {} text", q.e_t.rows()) } else { String::new() }
        );
    }
    let q = assemble_query(&input, &params, Stage::Alignment)?;
    let head0 = &q.pooled.trace.attention[0];
    let peak = (0..head0.rows()).map(|r| head0.row(r).iter().cloned().fold(0.0, f64::max)).fold(0.0, f64::max);
    println!("head 0 attention: {}x{}, largest weight {peak:.4} (uniform {:.4})", head0.rows(), head0.cols(), 1.0 / 49.0);
    Ok(())
}

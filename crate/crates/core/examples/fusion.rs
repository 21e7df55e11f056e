//! The three content/speaker fusion strategies side by side.
//!
//! `cargo run --example fusion`

use candle_core::DType;
use scs2ut::fusion::{Fusion, FusionKind};
use scs2ut::nnet::{Init, ParamStore};

fn main() -> scs2ut::Result<()> {
    let mut data = ParamStore::new(DType::F64, 7);
    let content = data.get("x.content", &[1, 6, 16], Init::Normal(1.0))?;
    let speaker = data.get("x.speaker", &[1, 16], Init::Normal(1.0))?;
    for kind in FusionKind::ALL {
        let mut ps = ParamStore::new(DType::F64, 1);
        let f = Fusion::new(&mut ps, "fusion", kind, 16, 4)?;
        let out = f.forward(&content, &speaker)?;
        let delta = (&out - &content)?;
        // spread of the per-frame change across positions
        let spread = delta.broadcast_sub(&delta.narrow(1, 0, 1)?)?.abs()?.max_all()?.to_scalar::<f64>()?;
        println!("{kind:>15}: {} params, output {:?}, max spread of (out - content) over time {spread:.2e}", ps.num_params(), out.dims());
    }
    Ok(())
}

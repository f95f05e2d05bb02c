//! Conformance checks every denoiser and codec plug-in must pass.

use super::{Cell, DenoiseRequest, DenoiserOracle, Direction, LatentCodec, LatentFrame};
use crate::image::ColorImage;

/// Calls the oracle on `frames` twice in each direction and on a
/// single-frame sequence, checking counts, shapes, variance sign and
/// determinism.
pub fn check_oracle(
    oracle: &dyn DenoiserOracle,
    frames: &[LatentFrame],
    cells: &[Cell],
    t: usize,
) -> Result<(), String> {
    for direction in [Direction::Temporal, Direction::Spatial] {
        for (frames, cells) in [(frames, cells), (&frames[..1], &cells[..1])] {
            let req = DenoiseRequest {
                direction,
                t,
                condition: 0,
                frames,
                cells,
            };
            let first = oracle.predict(&req).map_err(|e| format!("{direction:?}: {e}"))?;
            if first.len() != frames.len() {
                return Err(format!(
                    "{direction:?}: {} outputs for {} frames",
                    first.len(),
                    frames.len()
                ));
            }
            for (i, (out, z)) in first.iter().zip(frames).enumerate() {
                out.check(z.shape()).map_err(|e| format!("{direction:?} frame {i}: {e}"))?;
                if !out.epsilon.is_finite() {
                    return Err(format!("{direction:?} frame {i}: non-finite epsilon"));
                }
            }
            let second = oracle.predict(&req).map_err(|e| e.to_string())?;
            if first != second {
                return Err(format!("{direction:?}: repeated call differs"));
            }
        }
    }
    Ok(())
}

/// Shape arithmetic, determinism, exactness on a constant image and
/// rejection of indivisible sizes.
pub fn check_codec(codec: &dyn LatentCodec, width: usize, height: usize) -> Result<(), String> {
    let f = codec.factor();
    let img = ColorImage::from_fn(width, height, |x, y| {
        let v = ((x * 7 + y * 13) % 17) as f32 / 16.0;
        [v, 1.0 - v, 0.5]
    });
    let z = codec.encode(&img).map_err(|e| e.to_string())?;
    let (h, w, _) = z.shape();
    if (h, w) != (height / f, width / f) {
        return Err(format!("latent {h}x{w} for a {width}x{height} image at factor {f}"));
    }
    if codec.encode(&img).map_err(|e| e.to_string())? != z {
        return Err("encode is not deterministic".into());
    }
    let back = codec.decode(&z).map_err(|e| e.to_string())?;
    if back.dims() != (width, height) {
        return Err(format!("decode produced {:?}", back.dims()));
    }
    let flat = ColorImage::filled(width, height, [0.25, 0.5, 0.75]);
    let round = codec
        .decode(&codec.encode(&flat).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let err = round
        .data()
        .iter()
        .zip(flat.data())
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
        .fold(0.0f32, f32::max);
    if err > 1e-6 {
        return Err(format!("constant image reconstructed with error {err}"));
    }
    if f > 1 && codec.encode(&ColorImage::filled(width + 1, height, [0.0; 3])).is_ok() {
        return Err("indivisible width accepted".into());
    }
    Ok(())
}

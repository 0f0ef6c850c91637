use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::encode_rgb8;
use crate::model::ModelOutput;

/// Writes the attention maps of batch element `sample` as
/// `attn_l{layer}_{branch}_h{head}.ppm` (gray, 0 black, 1 white) and a
/// matching `.csv` with full-precision weights. Returns the written paths.
pub fn export_attention(
    output: &ModelOutput,
    sample: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    if output.attention.is_empty() {
        return Err(Error::contract("model output carries no attention maps"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();
    for map in &output.attention {
        let shape = map.weights.shape();
        let (batch, l) = (shape[0], shape[1]);
        if sample >= batch {
            return Err(Error::contract(format!(
                "sample {sample} outside batch of {batch}"
            )));
        }
        let w = &map.weights.data()[sample * l * l..(sample + 1) * l * l];
        let stem = format!("attn_l{}_{}_h{}", map.layer, map.branch, map.head);

        let gray: Vec<u8> = w
            .iter()
            .flat_map(|&x| {
                let g = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            })
            .collect();
        let ppm = dir.join(format!("{stem}.ppm"));
        fs::write(&ppm, encode_rgb8(l, l, &gray))
            .map_err(|e| Error::io(format!("writing {}", ppm.display()), e))?;

        let csv: String = w
            .chunks(l)
            .map(|row| {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                cells.join(",") + "\n"
            })
            .collect();
        let csv_path = dir.join(format!("{stem}.csv"));
        fs::write(&csv_path, csv)
            .map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;
        written.push(ppm);
        written.push(csv_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::read_ppm;
    use crate::model::{AttentionMap, Stream};
    use crate::tensor::Tensor;

    fn output(maps: Vec<AttentionMap>) -> ModelOutput {
        ModelOutput {
            angle: Tensor::zeros(&[1, 1]),
            speed: None,
            attention: maps,
        }
    }

    #[test]
    fn single_position_is_white_and_uniform_is_quarter_gray() {
        let dir = tempfile::tempdir().unwrap();
        let out = output(vec![
            AttentionMap {
                layer: 0,
                branch: Stream::Rgb,
                head: 0,
                weights: Tensor::full(&[1, 1, 1], 1.0),
            },
            AttentionMap {
                layer: 1,
                branch: Stream::Flow,
                head: 2,
                weights: Tensor::full(&[1, 4, 4], 0.25),
            },
        ]);
        let files = export_attention(&out, 0, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let white = fs::read(dir.path().join("attn_l0_rgb_h0.ppm")).unwrap();
        assert_eq!(&white[white.len() - 3..], &[255, 255, 255]);
        let gray = read_ppm(dir.path().join("attn_l1_flow_h2.ppm")).unwrap();
        assert_eq!((gray.width(), gray.height()), (4, 4));
        let raw = fs::read(dir.path().join("attn_l1_flow_h2.ppm")).unwrap();
        assert!(raw[raw.len() - 48..].iter().all(|&b| b == 64));
        let csv = fs::read_to_string(dir.path().join("attn_l1_flow_h2.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        for line in csv.lines() {
            let sum: f64 = line.split(',').map(|c| c.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_attention_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_attention(&output(vec![]), 0, dir.path()),
            Err(Error::Contract(_))
        ));
    }
}

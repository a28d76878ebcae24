//! Debug dump of a trajectory: one line of JSON header, a newline, then
//! every latent as little-endian `f32`, in increasing timestep order.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::latent::{LatentImage, Shape};
use super::sampler::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpHeader {
    /// `[channels, height, width]`
    pub shape: [usize; 3],
    /// Schedule length.
    #[serde(rename = "T")]
    pub total_steps: usize,
    /// Visited timesteps, one latent each.
    pub steps: Vec<usize>,
    pub seed: u64,
}

pub fn write_trajectory_dump<W: Write>(
    mut out: W,
    trajectory: &Trajectory,
    total_steps: usize,
    seed: u64,
) -> io::Result<()> {
    let shape = trajectory.clean().shape();
    let header = DumpHeader {
        shape: [shape.channels, shape.height, shape.width],
        total_steps,
        steps: trajectory.timesteps.clone(),
        seed,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for latent in &trajectory.latents {
        for v in latent.data() {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    out.flush()
}

/// Reads a dump back; values come back at `f32` precision.
pub fn read_trajectory_dump<R: BufRead>(mut input: R) -> io::Result<(DumpHeader, Trajectory)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: DumpHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let [c, h, w] = header.shape;
    let shape = Shape::new(c, h, w);
    let mut latents = Vec::with_capacity(header.steps.len());
    let mut buf = vec![0u8; shape.len() * 4];
    for _ in &header.steps {
        input.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        latents.push(
            LatentImage::from_vec(shape, data)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?,
        );
    }
    Ok((
        header.clone(),
        Trajectory {
            timesteps: header.steps,
            latents,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ddim_invert, make_analytic_predictor, Condition, NoiseSchedule};

    #[test]
    fn dump_round_trip_at_f32_precision() {
        let s = NoiseSchedule::default();
        let shape = Shape::new(2, 3, 4);
        let x0 = LatentImage::from_vec(shape, (0..24).map(|i| i as f64 / 7.0).collect()).unwrap();
        let p = make_analytic_predictor(x0.clone());
        let traj = ddim_invert(&x0, &s, &p, &Condition::background(x0.clone()), 5).unwrap();
        let mut bytes = Vec::new();
        write_trajectory_dump(&mut bytes, &traj, 1000, 42).unwrap();
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(bytes.len() - newline - 1, 6 * 24 * 4);
        let header: serde_json::Value = serde_json::from_slice(&bytes[..newline]).unwrap();
        assert_eq!(header["T"], 1000);
        assert_eq!(header["seed"], 42);
        assert_eq!(header["shape"], serde_json::json!([2, 3, 4]));

        let (h, back) = read_trajectory_dump(&bytes[..]).unwrap();
        assert_eq!(h.steps, traj.timesteps);
        for (a, b) in back.latents.iter().zip(&traj.latents) {
            assert!(a.max_abs_diff(b).unwrap() < 1e-6);
        }
    }
}

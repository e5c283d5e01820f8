//! Test double for the external embedder protocol.
//!
//! Usage: `voxify-embed-stub MODE` with MODE one of `zero`, `nan`, `builtin`,
//! `crash`, `hang`, `garbage`.

use std::io::{Read, Write};

use voxify_core::embed::{BuiltinEmbedder, CosineLoss, Patch, SemanticLoss};

fn read_patch(input: &mut impl Read, p: usize) -> std::io::Result<Patch> {
    let mut buf = vec![0u8; 12 * p * p];
    input.read_exact(&mut buf)?;
    let v: Vec<f64> = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok(Patch { size: p, pixels: v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() })
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "zero".into());
    if mode == "hang" {
        loop {
            std::thread::sleep(std::time::Duration::from_secs(3600));
        }
    }
    let mut input = std::io::stdin().lock();
    let mut output = std::io::stdout().lock();
    loop {
        let mut header = [0u8; 16];
        if input.read_exact(&mut header).is_err() {
            return;
        }
        assert_eq!(&header[..4], b"VEMB");
        let p = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let pairs = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut reply = Vec::new();
        for _ in 0..pairs {
            let (a, b) = match (read_patch(&mut input, p), read_patch(&mut input, p)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return,
            };
            let (loss, grad) = match mode.as_str() {
                "nan" => (f64::NAN, vec![[0.0; 3]; p * p]),
                "builtin" => CosineLoss(BuiltinEmbedder).loss_and_grad(&a, &b).expect("valid patch"),
                "crash" => std::process::exit(3),
                "garbage" => {
                    let _ = output.write_all(&[1, 2, 3]);
                    return;
                }
                _ => (0.0, vec![[0.0; 3]; p * p]),
            };
            reply.extend_from_slice(&(loss as f32).to_le_bytes());
            for g in grad.iter().flatten() {
                reply.extend_from_slice(&(*g as f32).to_le_bytes());
            }
        }
        if output.write_all(&reply).and_then(|_| output.flush()).is_err() {
            return;
        }
    }
}

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use crate::model::HOURS_PER_DAY;

/// Reads hour-token vectors from a whitespace separated text file in which
/// every line is a token followed by its components. Only the tokens
/// `"0"` to `"23"` are used; the first occurrence of each wins.
pub fn load_hour_embeddings(path: &Path, dim: usize) -> Result<Tensor<f32>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows: Vec<Option<Vec<f32>>> = vec![None; HOURS_PER_DAY];
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let Ok(hour) = token.parse::<usize>() else { continue };
        if hour >= HOURS_PER_DAY || token != hour.to_string() || rows[hour].is_some() {
            continue;
        }
        let values: Vec<f32> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        if values.len() != dim {
            return Err(Error::format(
                path,
                format!("token '{token}' has {} components, expected {dim}", values.len()),
            ));
        }
        rows[hour] = Some(values);
    }
    let missing: Vec<String> = (0..HOURS_PER_DAY)
        .filter(|&h| rows[h].is_none())
        .map(|h| h.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::format(path, format!("missing hour tokens: {}", missing.join(", "))));
    }
    Tensor::new(&[HOURS_PER_DAY, dim], rows.into_iter().flatten().flatten().collect())
}

/// A stand-in table of standard normal vectors, one per hour, for runs
/// without pretrained word vectors.
pub fn generate_hour_embeddings(dim: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6877_656d_6264);
    let data = (0..HOURS_PER_DAY * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::new(&[HOURS_PER_DAY, dim], data).expect("dim is positive")
}

/// Writes a table in the same text format `load_hour_embeddings` reads.
pub fn write_hour_embeddings(path: &Path, table: &Tensor<f32>) -> Result<()> {
    let dim = table.shape()[1];
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (h, row) in table.data().chunks(dim).enumerate() {
        write!(out, "{h}")?;
        for v in row {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

use super::record::AttributionMatrix;
use crate::error::{Error, Result};
use crate::model::{output_grads, per_example_grads, Checkpoint, Dataset};
use crate::tensor::{norm2, project_rows, DenseMatrix, PROJECTION_FAMILY};

#[derive(Clone, Debug, Default)]
pub struct TracinOptions {
    /// Divide both gradients by their L2 norm.
    pub normalize: bool,
    pub projection: Option<DenseMatrix>,
}

#[derive(Clone, Debug)]
pub struct TracinOutcome {
    pub matrix: AttributionMatrix,
    /// (test, train, checkpoint) triples skipped because a normalized gradient had zero norm.
    pub zero_norm_pairs: usize,
}

/// `Σ_t η_t ⟨g_t(z′), h_t(z_i)⟩` over per-checkpoint test rows `g_t` and training rows `h_t`.
pub fn tracin_from_grads(
    per_checkpoint: &[(DenseMatrix, DenseMatrix)],
    rates: &[f64],
    normalize: bool,
) -> Result<(DenseMatrix, usize)> {
    if per_checkpoint.is_empty() {
        return Err(Error::Domain("TracIn needs at least one checkpoint".into()));
    }
    if rates.len() != per_checkpoint.len() {
        return Err(Error::Dimension(format!(
            "{} checkpoints but {} learning rates",
            per_checkpoint.len(),
            rates.len()
        )));
    }
    let (t_count, n) = (per_checkpoint[0].0.rows(), per_checkpoint[0].1.rows());
    let mut total = DenseMatrix::zeros(t_count, n);
    let mut skipped = 0;
    for ((g, h), &eta) in per_checkpoint.iter().zip(rates) {
        if g.rows() != t_count || h.rows() != n || g.cols() != h.cols() {
            return Err(Error::Dimension("checkpoint gradient shapes disagree".into()));
        }
        let (g, h) = if normalize {
            let (g, zg) = unit_rows(g);
            let (h, zh) = unit_rows(h);
            skipped += zg * n + zh * t_count - zg * zh;
            (g, h)
        } else {
            (g.clone(), h.clone())
        };
        total = total.add(&g.matmul_tr(&h)?.scale(eta))?;
    }
    Ok((total, skipped))
}

fn unit_rows(m: &DenseMatrix) -> (DenseMatrix, usize) {
    let norms: Vec<f64> = m.row_iter().map(norm2).collect();
    let zeros = norms.iter().filter(|&&v| v == 0.0).count();
    let out = DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| {
        if norms[i] == 0.0 {
            0.0
        } else {
            m.get(i, j) / norms[i]
        }
    });
    (out, zeros)
}

/// TracIn over a checkpoint series with aligned learning rates.
pub fn tracin(
    series: &[Checkpoint],
    rates: &[f64],
    data: &Dataset,
    test: &Dataset,
    opts: &TracinOptions,
) -> Result<TracinOutcome> {
    let grads = series
        .iter()
        .map(|c| {
            let g = output_grads(c, test)?.0;
            let h = per_example_grads(c, data)?;
            match &opts.projection {
                Some(p) => Ok((project_rows(&g, p)?, project_rows(&h, p)?)),
                None => Ok((g, h)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (scores, zero_norm_pairs) = tracin_from_grads(&grads, rates, opts.normalize)?;
    let epochs: Vec<usize> = series.iter().map(|c| c.epoch).collect();
    let mut matrix = AttributionMatrix::new(scores, "tracin")?
        .with_param("normalize", opts.normalize)
        .with_param("epochs", epochs)
        .with_param("learning-rates", rates.to_vec());
    if let Some(p) = &opts.projection {
        matrix = matrix
            .with_param("projection-dim", p.cols())
            .with_param("projection-family", PROJECTION_FAMILY);
    }
    if let Some(last) = series.last() {
        matrix = matrix.with_checkpoint(last.content_hash());
    }
    Ok(TracinOutcome {
        matrix,
        zero_norm_pairs,
    })
}

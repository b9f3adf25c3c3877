use super::MeasureError;

/// Default bin cap for real-valued subprogram outputs.
pub const DEFAULT_MAX_BINS: usize = 32;

/// Equal-frequency binning into at most `max_bins` bins. Inputs with no
/// more than `max_bins` distinct values are coded by rank instead. Equal
/// values always share a bin and bin indices preserve order.
pub fn discretize(values: &[f64], max_bins: usize) -> Result<Vec<usize>, MeasureError> {
    if values.is_empty() {
        return Err(MeasureError::Empty);
    }
    if max_bins < 2 {
        return Err(MeasureError::BadParameter(format!(
            "max_bins must be at least 2, got {max_bins}"
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut distinct = 1;
    for w in order.windows(2) {
        if values[w[0]] != values[w[1]] {
            distinct += 1;
        }
    }
    let n = values.len();
    let mut out = vec![0; n];
    let mut rank = 0;
    let mut bin = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && values[i] != values[order[pos - 1]] {
            rank += 1;
            // a new value starts at its own sorted position
            bin = pos * max_bins / n;
        }
        out[i] = if distinct <= max_bins { rank } else { bin };
    }
    Ok(out)
}

use super::BaselineError;

/// Length of the longest common subsequence under exact symbol equality.
pub fn lcss_len(a: &[u16], b: &[u16]) -> Result<usize, BaselineError> {
    if a.is_empty() || b.is_empty() {
        return Err(BaselineError::Contract("lcss of an empty sequence".into()));
    }
    // single rolling row over b
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        let mut diag = 0;
        for (j, &y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    Ok(row[b.len()])
}

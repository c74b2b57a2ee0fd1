//! Shape arithmetic shared by the forward and backward passes.

/// Numpy-style broadcast of two shapes (right-aligned, extents equal or 1).
pub(crate) fn broadcast(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = extent_from_right(a, rank - 1 - i);
        let db = extent_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn extent_from_right(shape: &[usize], k: usize) -> usize {
    if k < shape.len() {
        shape[shape.len() - 1 - k]
    } else {
        1
    }
}

/// For every flat index of `out`, the flat index of the broadcast source
/// element in a tensor of shape `src`.
pub(crate) fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut src_strides = vec![0usize; rank];
    let mut stride = 1;
    for i in (0..src.len()).rev() {
        src_strides[offset + i] = if src[i] == 1 { 0 } else { stride };
        stride *= src[i];
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..numel {
        map.push(pos);
        for d in (0..rank).rev() {
            idx[d] += 1;
            pos += src_strides[d];
            if idx[d] < out[d] {
                break;
            }
            pos -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// Splits a shape around `axis` into (outer, axis extent, inner) counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast(&[2, 1, 5], &[3, 1]), Some(vec![2, 3, 5]));
        assert_eq!(broadcast(&[4, 3], &[4]), None);
    }

    #[test]
    fn broadcast_map_row_vector() {
        assert_eq!(broadcast_map(&[2, 3], &[3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_map(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_map(&[2, 2], &[1]), vec![0, 0, 0, 0]);
    }

    #[test]
    fn conv_shape_arithmetic() {
        assert_eq!(conv_out_len(8, 3, 1, 0), Some(6));
        assert_eq!(conv_out_len(8, 3, 2, 1), Some(4));
        assert_eq!(conv_out_len(2, 3, 1, 0), None);
    }
}

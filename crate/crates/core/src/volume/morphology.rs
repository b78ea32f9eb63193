//! Binary morphology with the 6-connected (face) structuring element.

use super::{linear_index, offset, unravel, BinaryMask, FACE_OFFSETS};
use std::collections::VecDeque;

/// One-step dilation; voxels outside the grid are ignored.
pub fn dilate(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims();
    let src = mask.data();
    let mut out = src.to_vec();
    for (i, &b) in src.iter().enumerate() {
        if !b {
            continue;
        }
        let p = unravel(dims, i);
        for d in FACE_OFFSETS {
            if let Some(q) = offset(dims, p, d) {
                out[linear_index(dims, q[0], q[1], q[2])] = true;
            }
        }
    }
    BinaryMask::new(dims, mask.spacing(), out).expect("same grid")
}

/// One-step erosion; voxels outside the grid count as background, so a
/// full mask loses its one-voxel boundary shell.
pub fn erode(mask: &BinaryMask) -> BinaryMask {
    erode_impl(mask, None)
}

/// `outside` decides, for an in-grid voxel, whether its out-of-grid face
/// neighbours count as foreground.
fn erode_impl(mask: &BinaryMask, outside: Option<&BinaryMask>) -> BinaryMask {
    let dims = mask.dims();
    let src = mask.data();
    let out: Vec<bool> = (0..src.len())
        .map(|i| {
            if !src[i] {
                return false;
            }
            let p = unravel(dims, i);
            FACE_OFFSETS.iter().all(|&d| match offset(dims, p, d) {
                Some(q) => src[linear_index(dims, q[0], q[1], q[2])],
                None => outside.map(|o| o.data()[i]).unwrap_or(false),
            })
        })
        .collect();
    BinaryMask::new(dims, mask.spacing(), out).expect("same grid")
}

/// Morphological closing `erode(dilate(mask))`, evaluated as if the grid
/// were zero-padded by one voxel. Closing is therefore extensive even for
/// masks touching the border.
pub fn close(mask: &BinaryMask) -> BinaryMask {
    let grown = dilate(mask);
    // In a padded grid the pad voxel facing `p` is set after dilation iff
    // `p` itself was set in the original mask.
    erode_impl(&grown, Some(mask))
}

/// Fills background components that are not 6-connected to the grid border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims();
    let src = mask.data();
    let mut reached = vec![false; src.len()];
    let mut queue = VecDeque::new();
    for (i, &b) in src.iter().enumerate() {
        if b {
            continue;
        }
        let p = unravel(dims, i);
        let on_border = (0..3).any(|a| p[a] == 0 || p[a] + 1 == dims[a]);
        if on_border {
            reached[i] = true;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        for d in FACE_OFFSETS {
            if let Some(q) = offset(dims, p, d) {
                let j = linear_index(dims, q[0], q[1], q[2]);
                if !src[j] && !reached[j] {
                    reached[j] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    let out = reached.into_iter().map(|r| !r).collect();
    BinaryMask::new(dims, mask.spacing(), out).expect("same grid")
}

pub fn fill_holes_and_close(mask: &BinaryMask) -> BinaryMask {
    close(&fill_holes(mask))
}

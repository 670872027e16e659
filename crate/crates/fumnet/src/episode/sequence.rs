//! Class-level feature averaging and channel vector sequence construction.
//!
//! Given per-class feature maps `[c, d]` and a query map `[c, d]`, step
//! `t` of the sequence concatenates channel `t` of every class map in
//! class order followed by the query's channel `t`, giving a
//! `[c, (N+1)·d]` matrix that downstream sequence models read channel by
//! channel.

use crate::tensor::{concat_features, Element, TensorError, Var};

/// The spliced `[c, (N+1)·d]` sequence for one query sample.
pub struct ChannelVectorSequence<'t, T: Element> {
    pub data: Var<'t, T>,
    pub channels: usize,
    pub dim: usize,
    pub n_way: usize,
}

/// Elementwise mean of the K support feature maps of one class. K = 1
/// passes the map through untouched, so 1-shot episodes are bit-identical
/// with or without the averaging stage.
pub fn class_level_average<'t, T: Element>(
    feature_maps: &[Var<'t, T>],
) -> Result<Var<'t, T>, TensorError> {
    let first = *feature_maps.first().ok_or(TensorError::EmptyInput {
        op: "class_level_average",
    })?;
    if feature_maps.len() == 1 {
        return Ok(first);
    }
    let mut acc = first;
    for map in &feature_maps[1..] {
        acc = acc.add(*map)?;
    }
    Ok(acc.scale(T::from_f64(1.0 / feature_maps.len() as f64)))
}

/// Splices N class-level maps and the query map along the feature axis.
pub fn build_channel_vector_sequence<'t, T: Element>(
    class_maps: &[Var<'t, T>],
    query_map: Var<'t, T>,
) -> Result<ChannelVectorSequence<'t, T>, TensorError> {
    if class_maps.is_empty() {
        return Err(TensorError::EmptyInput {
            op: "build_channel_vector_sequence",
        });
    }
    let shape = query_map.shape();
    if shape.len() != 2 {
        return Err(TensorError::InvalidShape {
            op: "build_channel_vector_sequence",
            shape,
            reason: "feature maps must be [channels, dim]".into(),
        });
    }
    for map in class_maps {
        if map.shape() != shape {
            return Err(TensorError::ShapeMismatch {
                op: "build_channel_vector_sequence",
                lhs: shape,
                rhs: map.shape(),
            });
        }
    }
    let mut parts = class_maps.to_vec();
    parts.push(query_map);
    let data = concat_features(&parts)?;
    Ok(ChannelVectorSequence {
        data,
        channels: shape[0],
        dim: shape[1],
        n_way: class_maps.len(),
    })
}

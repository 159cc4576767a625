//! Parameter binding shared by the network forwards: the same forward code
//! runs with trainable leaves (training) or frozen constants (inference,
//! or the non-updated networks inside an adversarial step).

use gamma_core::{Graph, NodeId, ParamSet};

use crate::GammaError;

pub enum Vars<'p> {
    /// Bind names against the graph's own parameter set as gradient leaves.
    Trainable,
    /// Bind names against an external set as constants.
    Frozen(&'p ParamSet),
}

pub fn bind(g: &mut Graph, vars: &Vars, name: &str) -> Result<NodeId, GammaError> {
    match vars {
        Vars::Trainable => Ok(g.var(name)?),
        Vars::Frozen(set) => {
            let t = set
                .get(name)
                .ok_or_else(|| GammaError::Contract(format!("unknown parameter {name:?}")))?;
            Ok(g.input(t))
        }
    }
}

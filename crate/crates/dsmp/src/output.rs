//! Trajectory CSV and JSON report envelopes.

use dsmp_core::lattice::{AdaptedField, Lattice};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

fn csv_error(e: csv::Error) -> CliError {
    CliError::config(format!("csv output: {e}"))
}

/// One row per node and level: `k, t, node, w_bits, b_bits` followed by
/// each field's components.
pub fn trajectory_csv(lattice: &Lattice, fields: &[(&str, &AdaptedField)]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["k", "t", "node", "w_bits", "b_bits"].iter().map(|s| s.to_string()).collect();
    for (name, f) in fields {
        header.extend((0..f.dim()).map(|c| format!("{name}{c}")));
    }
    w.write_record(&header).map_err(csv_error)?;
    let mut row = Vec::with_capacity(header.len());
    for k in 0..=lattice.steps() {
        for i in 0..lattice.nodes() {
            row.clear();
            row.push(k.to_string());
            row.push(lattice.time(k).to_string());
            row.push(i.to_string());
            row.push(lattice.w_bits(k, i));
            row.push(lattice.b_bits(k, i));
            for (_, f) in fields {
                row.extend(f.at(k, i).iter().map(|v| v.to_string()));
            }
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::config(format!("csv output: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::config(format!("csv output: {e}")))
}

/// Rows of plain numbers under a header.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::config(format!("csv output: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::config(format!("csv output: {e}")))
}

/// Per-level expectations of a field.
pub fn expectations(f: &AdaptedField) -> Value {
    let l = f.lattice();
    Value::Array((0..=l.steps()).map(|k| json!(f.expectation(k))).collect())
}

pub fn conventions(sign: Option<f64>) -> Value {
    json!({
        "coins": "bit 0 is an increment of +sqrt(dt), bit 1 is -sqrt(dt)",
        "node_index": "a level-k node holds w_0..w_{k-1} in the low groups and b_k..b_{N-1} above them",
        "system": "-dx = F dt + G dW - z dB, x_0 = xi; -dy = f dt + g dB - q dW, y_T = eta",
        "forward_step": "x_{k+1} = x_k - F_k dt - G_k dW_k + z_{k+1} dB_k, F and G at level k",
        "backward_step": "y_k = y_{k+1} + f_{k+1} dt + g_{k+1} dB_k - q_k dW_k, f and g at level k+1",
        "boundary_integrands": "q_N and z_0 are the adapted projections of q_{N-1} and z_1",
        "expectations": "exact averages over all lattice nodes",
        "cost": "J = E[sum_{k<N} l_k dt + chi(xi) + lambda(eta) + phi(x_N) + gamma(y_0)]",
        "costate_weights": "cost costates use h0 = h1 = 1; constraint multipliers h2, h3 as reported",
        "lq_sign": sign,
    })
}

pub fn envelope(command: &str, cfg: &RunConfig, sign: Option<f64>, result: Value) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "command": command,
        "config": cfg,
        "conventions": conventions(sign),
        "result": result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_node() {
        let l = Lattice::new(1.0, 2).unwrap();
        let x = AdaptedField::from_fn(&l, 1, |n, o| o[0] = n.index as f64);
        let text = trajectory_csv(&l, &[("x", &x)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,node,w_bits,b_bits,x0");
        assert_eq!(lines.len(), 1 + 3 * 4);
        assert_eq!(lines[1], "0,0,0,,00,0");
        assert_eq!(lines[12], "2,1,3,11,,3");
    }
}

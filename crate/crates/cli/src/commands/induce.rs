//! `induce`: print the cell/connection structure derived from a template
//! and optionally emit a Graphviz DOT graph.

use std::path::Path;

use anyhow::Context;

use u2detect_core::bergman::bergman_template;
use u2detect_core::model::ModelTemplate;
use u2detect_core::rnn::DynamicsRnn;

use crate::{runtime, usage, CmdResult};

pub fn run(template_arg: &str, dot_path: Option<&Path>) -> CmdResult {
    let template = if template_arg == "bergman" {
        bergman_template()
    } else {
        ModelTemplate::from_json_file(Path::new(template_arg))
            .with_context(|| format!("loading template {template_arg}"))
            .map_err(usage)?
    };
    // structure only; the step width is irrelevant here
    let net = DynamicsRnn::induce(&template, 1.0).map_err(usage)?;

    println!("variables: {}", template.variables().join(", "));
    let observables: Vec<&str> = template
        .observable_indices()
        .into_iter()
        .map(|i| template.variables()[i].as_str())
        .collect();
    println!("observable: {}", observables.join(", "));
    let (conns, taps) = net.edge_count();
    println!(
        "cells: {}   connections: {conns}   input taps: {taps}   trainable weights: {}",
        net.cells().len(),
        net.weight_count()
    );
    for (i, cell) in net.cells().iter().enumerate() {
        let var = &template.variables()[i];
        let sources: Vec<String> = cell
            .connections
            .iter()
            .map(|&(j, _)| template.variables()[j].clone())
            .collect();
        let tap = if cell.input_tap.is_some() {
            format!(" + input {}", template.inputs()[i])
        } else {
            String::new()
        };
        println!("  cell {var}: inputs from [{}]{tap}", sources.join(", "));
    }

    let dot = to_dot(&template, &net);
    if let Some(path) = dot_path {
        std::fs::write(path, dot)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
        println!("wrote {}", path.display());
    } else {
        println!("{dot}");
    }
    Ok(())
}

fn to_dot(template: &ModelTemplate, net: &DynamicsRnn) -> String {
    let mut out = String::from("digraph induced_network {\n  rankdir=LR;\n");
    for (i, var) in template.variables().iter().enumerate() {
        let shape = if template.is_observable(i) {
            "doublecircle"
        } else {
            "circle"
        };
        out.push_str(&format!("  \"{var}\" [shape={shape}];\n"));
    }
    for (i, cell) in net.cells().iter().enumerate() {
        let to = &template.variables()[i];
        for &(j, slot) in &cell.connections {
            let from = &template.variables()[j];
            out.push_str(&format!(
                "  \"{from}\" -> \"{to}\" [label=\"w{slot}\"];\n"
            ));
        }
        if let Some(slot) = cell.input_tap {
            let input = &template.inputs()[i];
            out.push_str(&format!(
                "  \"{input}\" [shape=box];\n  \"{input}\" -> \"{to}\" [label=\"w{slot}\"];\n"
            ));
        }
    }
    out.push_str("}\n");
    out
}

//! Graphviz rendering of a page model.

use std::fmt::Write;

use crate::model::PageModel;
use crate::types::PageId;

fn is_plain_id(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn node_id(page: &PageId) -> String {
    if is_plain_id(page.as_str()) {
        page.as_str().to_owned()
    } else {
        format!("\"{}\"", escape(page.as_str()))
    }
}

/// Renders pages sorted by id, labelled with their progress, and every
/// observed edge labelled with its probability. Excluded pages are dashed.
pub fn to_dot(model: &PageModel) -> String {
    let mut out = String::new();
    let pages = model.transitions.pages();
    out.push_str("digraph page_model {\n");
    out.push_str("    rankdir=LR;\n");
    for page in pages {
        let progress = match model.progress.get(page) {
            Some(v) => format!("{v:.2}"),
            None => "n/a".to_owned(),
        };
        let label = escape(&format!("{page} (progress={progress})"));
        let mut attrs = format!("label=\"{label}\"");
        if *page == model.task.begin || *page == model.task.final_page {
            attrs.push_str(" shape=doublecircle");
        }
        if model.excluded.contains(page) {
            attrs.push_str(" style=dashed");
        }
        writeln!(out, "    {} [{attrs}];", node_id(page)).unwrap();
    }
    for (i, from) in pages.iter().enumerate() {
        for (j, to) in pages.iter().enumerate() {
            let prob = model.transitions.probs()[i][j];
            if prob > 0.0 {
                writeln!(out, "    {} -> {} [label=\"{prob:.2}\"];", node_id(from), node_id(to)).unwrap();
            }
        }
    }
    out.push_str("}\n");
    out
}

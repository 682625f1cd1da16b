use std::fmt::Write;

use super::{DataModel, NodeSchema, PropertyKind, ScalarKind};

/// Implicit scalar fields every node exposes, in declaration order.
pub const IMPLICIT_FIELDS: [&str; 3] = ["id", "submitter_id", "project_id"];

fn scalar_type(kind: ScalarKind) -> &'static str {
    match kind {
        ScalarKind::String | ScalarKind::Enum => "String",
        ScalarKind::Boolean => "Boolean",
        ScalarKind::Number => "Float",
        ScalarKind::Integer => "Int",
    }
}

/// Argument list for a field returning entities of `node`: paging plus one
/// equality argument per implicit field and scalar property.
fn arguments(node: &NodeSchema) -> String {
    let mut args = vec!["first: Int".to_owned(), "offset: Int".to_owned()];
    args.extend(IMPLICIT_FIELDS.iter().map(|f| format!("{f}: String")));
    for prop in node.properties.values() {
        if let PropertyKind::Scalar(k) = prop.kind {
            args.push(format!("{}: {}", prop.name, scalar_type(k)));
        }
    }
    args.join(", ")
}

/// Render the query schema in GraphQL SDL. Output depends only on the
/// model content.
pub fn generate_query_schema(model: &DataModel) -> String {
    let mut out = String::new();
    out.push_str("type Query {\n");
    for node in model.nodes() {
        let _ = writeln!(out, "  {}({}): [{}]", node.id, arguments(node), node.id);
    }
    out.push_str("}\n");

    for node in model.nodes() {
        let _ = writeln!(out, "\ntype {} {{", node.id);
        out.push_str("  id: ID!\n  submitter_id: String!\n  project_id: String!\n");
        for prop in node.properties.values() {
            let ty = match prop.kind {
                PropertyKind::Scalar(k) => scalar_type(k).to_owned(),
                PropertyKind::Array(k) => format!("[{}]", scalar_type(k)),
            };
            let _ = writeln!(out, "  {}: {ty}", prop.name);
        }
        let mut nested: Vec<(&str, &str)> = node
            .links
            .iter()
            .map(|l| (l.name.as_str(), l.target_type.as_str()))
            .chain(
                model
                    .backrefs(&node.id)
                    .iter()
                    .map(|b| (b.name.as_str(), b.source_node.as_str())),
            )
            .collect();
        nested.sort_unstable();
        for (name, target) in nested {
            if let Some(t) = model.node(target) {
                let _ = writeln!(out, "  {name}({}): [{target}]", arguments(t));
            }
        }
        out.push_str("}\n");
    }
    out
}

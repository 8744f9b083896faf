use std::fmt::Write;

use super::{Argument, SelectorInstance, SelectorKind, SelectorPipeline, SelectorRef};

/// Canonical text for a pipeline: one instance per line, imports already
/// expanded. Parsing the output yields an equal pipeline.
pub fn format_spec(pipeline: &SelectorPipeline) -> String {
    let mut out = String::new();
    for inst in &pipeline.instances {
        if let Some(name) = &inst.name {
            let _ = write!(out, "{name} = ");
        }
        write_expr(&mut out, inst);
        out.push('\n');
    }
    out
}

fn write_expr(out: &mut String, inst: &SelectorInstance) {
    if inst.kind == SelectorKind::Identity {
        if let Some(Argument::Selector(r)) = inst.args.first() {
            write_ref(out, r);
            return;
        }
    }
    out.push_str(inst.kind.keyword());
    out.push('(');
    for (i, arg) in inst.args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match arg {
            Argument::Str(s) => write_str(out, s),
            Argument::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Argument::Op(op) => write_str(out, op.as_str()),
            Argument::Selector(r) => write_ref(out, r),
        }
    }
    out.push(')');
}

fn write_ref(out: &mut String, r: &SelectorRef) {
    match r {
        SelectorRef::Universe => out.push_str("%%"),
        SelectorRef::Named(n) => {
            out.push('%');
            out.push_str(n);
        }
        SelectorRef::Inline(inst) => write_expr(out, inst),
    }
}

fn write_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::super::{parse_spec, NoImports};
    use super::*;

    #[test]
    fn canonical_form_of_join() {
        let p = parse_spec("x   =  join(%%,%%)", &NoImports).unwrap();
        assert_eq!(format_spec(&p), "x = join(%%, %%)\n");
    }

    #[test]
    fn empty_pipeline_formats_to_empty_text() {
        let text = format_spec(&SelectorPipeline::default());
        assert_eq!(text, "");
        assert!(parse_spec(&text, &NoImports).is_err());
    }

    #[test]
    fn escapes_survive_round_trip() {
        let src = "a = byName(\"a\\\\.b\\\"c\", %%)\n%a\n";
        let p = parse_spec(src, &NoImports).unwrap();
        let text = format_spec(&p);
        assert_eq!(text, src);
        assert_eq!(parse_spec(&text, &NoImports).unwrap(), p);
    }
}

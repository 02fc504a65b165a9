//! Versioned instruction fixtures sent to the model by the pipeline stages.

/// An instruction template with `{{name}}` slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstructionFixture {
    pub name: &'static str,
    pub version: &'static str,
    pub text: &'static str,
}

pub const LABEL_CLUSTER: InstructionFixture = InstructionFixture {
    name: "label_cluster",
    version: "v1",
    text: include_str!("../fixtures/prompts/label_cluster.v1.txt"),
};

pub const MAP_TECHNIQUES: InstructionFixture = InstructionFixture {
    name: "map_techniques",
    version: "v1",
    text: include_str!("../fixtures/prompts/map_techniques.v1.txt"),
};

pub const GENERATE_TEMPLATE: InstructionFixture = InstructionFixture {
    name: "generate_template",
    version: "v1",
    text: include_str!("../fixtures/prompts/generate_template.v1.txt"),
};

/// Answer-format instruction inserted at `{$FINAL_ANSWER_FORMAT}` during evaluation.
pub const FINAL_ANSWER_FORMAT: &str = include_str!("../fixtures/final_answer_format.bbeh.txt");

impl InstructionFixture {
    pub fn id(&self) -> String {
        format!("{}.{}", self.name, self.version)
    }

    /// Single-pass substitution; inserted values are never rescanned.
    pub fn render(&self, slots: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let key = &after[..end];
                    match slots.iter().find(|(k, _)| *k == key) {
                        Some((_, v)) => out.push_str(v),
                        None => out.push_str(&rest[start..start + 2 + end + 2]),
                    }
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out.trim_end().to_string()
    }
}

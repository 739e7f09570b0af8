use super::TeacherError;

pub const DOC_PLACEHOLDER: &str = "{doc}";
pub const LABEL_PLACEHOLDER: &str = "{label_text}";
pub const DEFAULT_MAX_DOC_TOKENS: usize = 430;

const EURLEX: &str = "document = {doc}. Is the tag {label_text} relevant to the document? answer yes or no";
const AMAZONCAT: &str = "document = {doc}. The document is amazon product description, Is the tag {label_text} relevant to the document? answer yes or no";
const WIKISEEALSO: &str = "document = {doc}. The document is the wikipedia page. Does another wikipedia page name \"{label_text}\" has the relation to the document? answer yes or no";
const WIKIPEDIA: &str = "document = {doc}, the document is the wikipedia page. Is the tag \"{label_text}\" relevant to the document? answer yes or no";

/// A point-wise relevance question with `{doc}` and `{label_text}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    max_doc_tokens: usize,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>, max_doc_tokens: usize) -> Result<Self, TeacherError> {
        let text = text.into();
        for p in [DOC_PLACEHOLDER, LABEL_PLACEHOLDER] {
            let n = text.matches(p).count();
            if n != 1 {
                return Err(TeacherError::InvalidTemplate(format!(
                    "placeholder {p} must appear exactly once, found {n}"
                )));
            }
        }
        Ok(Self { text, max_doc_tokens })
    }

    /// Built-in templates by dataset family: `eurlex`, `wiki10`,
    /// `amazoncat`, `wikiseealso`, `wikipedia`.
    pub fn preset(name: &str) -> Option<Self> {
        let text = match name.to_ascii_lowercase().as_str() {
            "eurlex" | "eurlex-4k" | "wiki10" | "wiki10-31k" => EURLEX,
            "amazoncat" | "amazoncat-13k" => AMAZONCAT,
            "wikiseealso" | "lf-wikiseealso-320k" => WIKISEEALSO,
            "wikipedia" | "lf-wikipedia-500k" => WIKIPEDIA,
            _ => return None,
        };
        Some(Self {
            text: text.to_string(),
            max_doc_tokens: DEFAULT_MAX_DOC_TOKENS,
        })
    }

    pub fn with_max_doc_tokens(mut self, n: usize) -> Self {
        self.max_doc_tokens = n;
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn max_doc_tokens(&self) -> usize {
        self.max_doc_tokens
    }

    /// Fills both slots. The document is cut to its first `max_doc_tokens`
    /// whitespace tokens; shorter documents are inserted verbatim.
    pub fn render(&self, doc: &str, label_text: &str) -> String {
        let doc = truncate_tokens(doc, self.max_doc_tokens);
        let (first, first_val, second, second_val) = {
            let d = self.text.find(DOC_PLACEHOLDER).expect("validated template");
            let l = self.text.find(LABEL_PLACEHOLDER).expect("validated template");
            if d < l {
                (d, (DOC_PLACEHOLDER, doc), l, (LABEL_PLACEHOLDER, label_text))
            } else {
                (l, (LABEL_PLACEHOLDER, label_text), d, (DOC_PLACEHOLDER, doc))
            }
        };
        let mut out = String::with_capacity(self.text.len() + doc.len() + label_text.len());
        out.push_str(&self.text[..first]);
        out.push_str(first_val.1);
        out.push_str(&self.text[first + first_val.0.len()..second]);
        out.push_str(second_val.1);
        out.push_str(&self.text[second + second_val.0.len()..]);
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::preset("eurlex").expect("built-in preset")
    }
}

/// The prefix of `text` ending at its `n`-th whitespace token.
pub fn truncate_tokens(text: &str, n: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                count += 1;
                if count == n {
                    return &text[..i];
                }
            }
            in_token = false;
        } else {
            in_token = true;
        }
    }
    if n == 0 {
        return "";
    }
    text
}

use std::fmt;
use std::path::Path;

/// A failure rendered as one `key=value` line. Values with spaces or quotes
/// are JSON-quoted; `message` always is.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    fields: Vec<(&'static str, String)>,
    message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            fields: Vec::new(),
            message: message.into(),
        }
    }

    fn with(mut self, key: &'static str, value: String) -> Self {
        if !self.fields.iter().any(|(k, _)| *k == key) {
            self.fields.push((key, value));
        }
        self
    }

    pub fn path(self, p: &Path) -> Self {
        self.with("path", p.display().to_string())
    }

    pub fn field(self, name: &str) -> Self {
        self.with("field", name.to_string())
    }

    pub fn line(self, n: usize) -> Self {
        self.with("line", n.to_string())
    }
}

impl From<specflow::Error> for CliError {
    fn from(e: specflow::Error) -> Self {
        use specflow::Error as E;
        let message = e.to_string();
        match e {
            E::Io { path, .. } => CliError::new("io", message).path(&path),
            E::DimMismatch {
                what,
                expected,
                found,
            } => CliError::new("dim_mismatch", message)
                .with("dimension", what.to_string())
                .with("expected", expected.to_string())
                .with("found", found.to_string()),
            E::Format { offset, .. } => {
                CliError::new("format", message).with("offset", offset.to_string())
            }
            E::Config(ref m) => {
                let err = CliError::new("config", message.clone());
                // Validation messages lead with the offending key.
                match m.split_once(':') {
                    Some((key, _)) if !key.contains(' ') => err.field(key),
                    _ => err,
                }
            }
            E::NonFiniteLoss { step } => {
                CliError::new("non_finite_loss", message).with("step", step.to_string())
            }
            E::NonFiniteGradient { ref name } => {
                let name = name.clone();
                CliError::new("non_finite_gradient", message).with("parameter", name)
            }
            _ => CliError::new("invalid", message),
        }
    }
}

fn quote_if_needed(v: &str) -> String {
    if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '"' || c == '=') {
        serde_json::to_string(v).expect("string serializes")
    } else {
        v.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: kind={}", self.kind)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={}", quote_if_needed(v))?;
        }
        let msg = serde_json::to_string(&self.message).expect("string serializes");
        write!(f, " message={msg}")
    }
}

pub fn write_file(path: &Path, contents: String) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| {
        CliError::from(specflow::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_with_quoted_message() {
        let e = CliError::from(specflow::Error::DimMismatch {
            what: "horizon",
            expected: 16,
            found: 32,
        })
        .path(Path::new("/tmp/a b.fqpd"));
        let s = e.to_string();
        assert!(!s.contains('\n'));
        assert!(s.starts_with("error: kind=dim_mismatch dimension=horizon expected=16 found=32 path=\"/tmp/a b.fqpd\""), "{s}");
        assert!(s.ends_with("message=\"dimension mismatch for horizon: expected 16, found 32\""));
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = CliError::from(specflow::Error::Config(
            "learning_rate: must be positive".into(),
        ));
        assert!(e.to_string().contains("field=learning_rate"));
    }
}

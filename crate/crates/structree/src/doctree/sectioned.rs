//! Plain-text article parser. Headings are lines wrapped in `=` runs (run
//! length = nesting depth, wiki style), paragraphs are separated by blank
//! lines, sentences end at `.`, `?` or `!` followed by whitespace.

use super::{structure_err, DocNode, DocTree, LeafGranularity, NodeKind, TreeError};

/// Split a paragraph into sentences. Terminal punctuation stays with its
/// sentence; a trailing fragment without punctuation still counts.
pub(crate) fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if matches!(bytes[i], b'.' | b'?' | b'!') {
            let mut j = i + 1;
            while j < bytes.len() && matches!(bytes[j], b'.' | b'?' | b'!') {
                j += 1;
            }
            if j >= bytes.len() || bytes[j].is_ascii_whitespace() {
                let s = text[start..j].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn heading_depth(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim();
    if !trimmed.starts_with('=') {
        return None;
    }
    let depth = trimmed.chars().take_while(|c| *c == '=').count();
    let title = trimmed.trim_matches('=').trim();
    Some((depth, title))
}

struct Builder {
    /// Paragraphs collected before any heading attach to the document itself.
    preamble: Vec<DocNode>,
    /// Open sections from outermost to innermost, with their heading depth.
    stack: Vec<(usize, DocNode)>,
    done: Vec<DocNode>,
    line_no: usize,
}

impl Builder {
    fn paragraph_home(&mut self) -> &mut Vec<DocNode> {
        match self.stack.last_mut() {
            Some((_, section)) => &mut section.children,
            None => &mut self.preamble,
        }
    }

    fn close_to(&mut self, depth: usize) -> Result<(), TreeError> {
        while let Some((d, _)) = self.stack.last() {
            if *d < depth {
                break;
            }
            let (_, section) = self.stack.pop().unwrap();
            if section.children.is_empty() {
                return structure_err(
                    "input",
                    format!("section {:?} has no content", section.title.as_deref().unwrap_or("")),
                );
            }
            match self.stack.last_mut() {
                Some((_, parent)) => parent.children.push(section),
                None => self.done.push(section),
            }
        }
        Ok(())
    }

    fn open(&mut self, depth: usize, title: &str) -> Result<(), TreeError> {
        self.close_to(depth)?;
        let open_depth = self.stack.last().map(|(d, _)| *d).unwrap_or(0);
        if depth != open_depth + 1 {
            return structure_err(
                "input",
                format!(
                    "line {}: heading {:?} at depth {} cannot attach (deepest open section is {})",
                    self.line_no, title, depth, open_depth
                ),
            );
        }
        if title.is_empty() {
            return structure_err("input", format!("line {}: heading with empty title", self.line_no));
        }
        self.stack.push((depth, DocNode::internal(NodeKind::Section, Some(title.to_string()), Vec::new())));
        Ok(())
    }
}

/// Parse one article into a sentence-granularity tree. The caller assigns the
/// label afterwards (the text format does not carry one).
pub fn parse_sectioned_text(text: &str) -> Result<DocTree, TreeError> {
    let mut b = Builder { preamble: Vec::new(), stack: Vec::new(), done: Vec::new(), line_no: 0 };
    let mut para_buf: Vec<&str> = Vec::new();

    let flush = |b: &mut Builder, buf: &mut Vec<&str>| -> Result<(), TreeError> {
        if buf.is_empty() {
            return Ok(());
        }
        let joined = buf.join(" ");
        buf.clear();
        let sentences = split_sentences(&joined);
        if sentences.is_empty() {
            return Ok(());
        }
        let kids = sentences.into_iter().map(|s| DocNode::leaf(NodeKind::Sentence, s)).collect();
        b.paragraph_home().push(DocNode::internal(NodeKind::Paragraph, None, kids));
        Ok(())
    };

    for line in text.lines() {
        b.line_no += 1;
        if let Some((depth, title)) = heading_depth(line) {
            flush(&mut b, &mut para_buf)?;
            b.open(depth, title)?;
        } else if line.trim().is_empty() {
            flush(&mut b, &mut para_buf)?;
        } else {
            para_buf.push(line.trim());
        }
    }
    flush(&mut b, &mut para_buf)?;
    b.close_to(1)?;

    let mut children = b.preamble;
    children.extend(b.done);
    if children.is_empty() {
        return structure_err("input", "no sentences found");
    }
    DocTree::new(0, LeafGranularity::Sentence, DocNode::internal(NodeKind::Document, None, children))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doctree::doc_stats;

    #[test]
    fn splits_on_terminal_punctuation_runs() {
        assert_eq!(split_sentences("What?! Really. Yes"), vec!["What?!", "Really.", "Yes"]);
        assert_eq!(split_sentences("One sentence only."), vec!["One sentence only."]);
        // Version numbers do not end sentences: no whitespace after the dot.
        assert_eq!(split_sentences("Released as 2.5 today. Done."), vec!["Released as 2.5 today.", "Done."]);
    }

    #[test]
    fn article_with_headings_builds_the_expected_shape() {
        let text = "Lead sentence one. Lead sentence two.\n\
                    \n\
                    = Alpha =\n\
                    First paragraph here. It has two sentences.\n\
                    \n\
                    Second paragraph.\n\
                    \n\
                    == Alpha inner ==\n\
                    Nested content.\n\
                    \n\
                    = Beta =\n\
                    Closing words!\n";
        let tree = parse_sectioned_text(text).unwrap();
        let s = doc_stats(&tree);
        assert_eq!(s.sections, 3);
        assert_eq!(s.paragraphs, 5);
        assert_eq!(s.sentences, 7);

        // Preamble paragraph sits directly under the document.
        assert_eq!(tree.root.children[0].kind, NodeKind::Paragraph);
        let alpha = &tree.root.children[1];
        assert_eq!(alpha.title.as_deref(), Some("Alpha"));
        assert_eq!(alpha.children.len(), 3);
        assert_eq!(alpha.children[2].title.as_deref(), Some("Alpha inner"));
        tree.validate().unwrap();
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse_sectioned_text("").is_err());
        assert!(parse_sectioned_text("\n  \n").is_err());
    }

    #[test]
    fn heading_without_body_is_an_error() {
        let err = parse_sectioned_text("= Ghost =\n\n= Real =\nText.\n").unwrap_err();
        assert!(err.to_string().contains("Ghost"), "{err}");
    }

    #[test]
    fn orphan_subsection_is_an_error() {
        let err = parse_sectioned_text("== Too deep ==\nText.\n").unwrap_err();
        assert!(err.to_string().contains("depth 2"), "{err}");
    }
}

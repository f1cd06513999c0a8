/// Interiors of every closed ``` fence, in order. The line carrying the
/// opening fence (and any language tag) is not part of the block; unclosed
/// and blank blocks are skipped.
pub fn extract_fenced_blocks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let fence = line.trim_start().starts_with("```");
        match current.as_mut() {
            None if fence => current = Some(Vec::new()),
            None => {}
            Some(_) if fence && line.trim() == "```" => {
                let block = current.take().unwrap_or_default().join("\n");
                if !block.trim().is_empty() {
                    out.push(block);
                }
            }
            Some(lines) => lines.push(line),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block() {
        let text = "Here is a policy:\n```\nIF starvation_risk[1] THEN 1\nELSE argmax(pressure)\n```\nIt balances service.";
        assert_eq!(
            extract_fenced_blocks(text),
            vec!["IF starvation_risk[1] THEN 1\nELSE argmax(pressure)".to_string()]
        );
    }

    #[test]
    fn tagged_and_multiple() {
        let text = "```tpet\nELSE 0\n```\nand\n```text\n  ELSE argmax(queue)\n```\n";
        assert_eq!(extract_fenced_blocks(text), vec!["ELSE 0", "  ELSE argmax(queue)"]);
    }

    #[test]
    fn no_block_or_unclosed() {
        assert!(extract_fenced_blocks("ELSE argmax(pressure)").is_empty());
        assert!(extract_fenced_blocks("```\nELSE 0\n").is_empty());
        assert!(extract_fenced_blocks("```\n\n```").is_empty());
    }

    #[test]
    fn crlf_lines() {
        assert_eq!(extract_fenced_blocks("```\r\nELSE 1\r\n```\r\n"), vec!["ELSE 1"]);
    }
}

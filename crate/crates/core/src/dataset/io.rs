//! On-disk dataset format.
//!
//! A split is a directory holding `train.txt` and `test.txt`. Each file
//! starts with `# key=value` comment headers (format marker, provenance,
//! isolated primitives) followed by one example per line in the released
//! SCAN text convention, single-spaced:
//!
//! ```text
//! IN: jump twice after look OUT: LOOK JUMP JUMP
//! ```
//!
//! Writes are whole-file atomic (temp file, then rename); a read of a write
//! reproduces the split exactly, provenance included.

use super::{DatasetProvenance, ForgeError, Split};
use crate::grammar::{ActionSequence, Command, Example, ExampleKind, PrimitiveEntry, PrimitiveRole};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const FORMAT: &str = "scanlab.dataset.v1";

pub fn write_dataset(split: &Split, dir: &Path) -> Result<(), ForgeError> {
    fs::create_dir_all(dir)?;
    write_side(split, &split.train, "train", &dir.join("train.txt"))?;
    write_side(split, &split.test, "test", &dir.join("test.txt"))?;
    Ok(())
}

fn write_side(
    split: &Split,
    examples: &[Example],
    side: &str,
    path: &Path,
) -> Result<(), ForgeError> {
    let tmp = path.with_extension("txt.tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        writeln!(w, "# format={FORMAT}")?;
        writeln!(w, "# split={side}")?;
        let provenance =
            serde_json::to_string(&split.provenance).expect("provenance serializes compactly");
        writeln!(w, "# provenance={provenance}")?;
        let isolated: Vec<String> = split
            .isolated
            .iter()
            .map(|p| format!("{}:{}", p.surface, p.action))
            .collect();
        writeln!(w, "# isolated={}", isolated.join(","))?;
        for e in examples {
            writeln!(w, "IN: {} OUT: {}", e.input, e.output)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Split, ForgeError> {
    let (train, provenance, isolated) = read_side(&dir.join("train.txt"))?;
    let (test, provenance_t, isolated_t) = read_side(&dir.join("test.txt"))?;
    if provenance != provenance_t || isolated != isolated_t {
        return Err(ForgeError::MissingHeader(format!(
            "{}: train and test headers disagree",
            dir.display()
        )));
    }
    Ok(Split {
        train,
        test,
        isolated,
        provenance,
    })
}

type SideContents = (Vec<Example>, DatasetProvenance, Vec<PrimitiveEntry>);

fn read_side(path: &Path) -> Result<SideContents, ForgeError> {
    let display = path.display().to_string();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut provenance: Option<DatasetProvenance> = None;
    let mut isolated: Option<Vec<PrimitiveEntry>> = None;
    let mut saw_format = false;
    let mut examples = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            let header = header.trim();
            if let Some((key, value)) = header.split_once('=') {
                match key.trim() {
                    "format" => {
                        if value.trim() != FORMAT {
                            return Err(ForgeError::MissingHeader(format!(
                                "{display}: unsupported format '{}'",
                                value.trim()
                            )));
                        }
                        saw_format = true;
                    }
                    "provenance" => {
                        provenance = Some(serde_json::from_str(value.trim()).map_err(|e| {
                            ForgeError::MalformedLine {
                                path: display.clone(),
                                line: line_no,
                                reason: format!("bad provenance: {e}"),
                            }
                        })?);
                    }
                    "isolated" => {
                        let mut entries = Vec::new();
                        for part in value.trim().split(',').filter(|s| !s.is_empty()) {
                            let (surface, action) = part.split_once(':').ok_or_else(|| {
                                ForgeError::MalformedLine {
                                    path: display.clone(),
                                    line: line_no,
                                    reason: format!("bad isolated entry '{part}'"),
                                }
                            })?;
                            entries.push(PrimitiveEntry::new(
                                surface,
                                action,
                                PrimitiveRole::Isolated,
                            ));
                        }
                        isolated = Some(entries);
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !saw_format {
            return Err(ForgeError::MissingHeader(display));
        }
        let rest = trimmed
            .strip_prefix("IN: ")
            .ok_or_else(|| ForgeError::MalformedLine {
                path: display.clone(),
                line: line_no,
                reason: "missing 'IN:' prefix".into(),
            })?;
        let (input, output) =
            rest.split_once(" OUT: ")
                .ok_or_else(|| ForgeError::MalformedLine {
                    path: display.clone(),
                    line: line_no,
                    reason: "missing 'OUT:' marker".into(),
                })?;
        if input.is_empty() || output.is_empty() {
            return Err(ForgeError::MalformedLine {
                path: display.clone(),
                line: line_no,
                reason: "empty input or output".into(),
            });
        }
        let input = Command::from_str(input);
        let output = ActionSequence::from_str(output);
        let kind = if input.tokens().len() == 1 && output.tokens().len() == 1 {
            ExampleKind::PrimitiveDefinition
        } else {
            ExampleKind::Compositional
        };
        examples.push(Example::new(input, output, kind));
    }

    if !saw_format {
        return Err(ForgeError::MissingHeader(display));
    }
    let provenance = provenance.ok_or_else(|| ForgeError::MissingHeader(display.clone()))?;
    let isolated = isolated.ok_or(ForgeError::MissingHeader(display))?;
    Ok((examples, provenance, isolated))
}

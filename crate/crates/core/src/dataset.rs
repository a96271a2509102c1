//! Sequence directories: `<seq>/img/NNNN.ppm` plus `<seq>/groundtruth_rect.txt`
//! holding one `x,y,w,h` line per frame (1-based corner).

use std::fs;
use std::path::{Path, PathBuf};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image;
use crate::tensor::Tensor;

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const IMAGE_DIR: &str = "img";

/// File name of frame `index` (0-based), numbered from 1.
pub fn frame_file_name(index: usize) -> String {
    format!("{:04}.ppm", index + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub groundtruth: Vec<BBox>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<Tensor> {
        let path = self
            .frames
            .get(index)
            .ok_or_else(|| Error::Dataset(format!("{}: frame {index} out of range", self.name)))?;
        image::read_ppm(path)
    }
}

/// Parses `x,y,w,h` lines; commas, tabs and spaces are all accepted as separators.
pub fn parse_boxes(text: &str, origin: &str) -> Result<Vec<BBox>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(format!("{origin}:{}: {e}", n + 1)))?;
        if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "{origin}:{}: expected 4 finite numbers, got `{line}`",
                n + 1
            )));
        }
        out.push(BBox::from_xywh_one_based(vals[0], vals[1], vals[2], vals[3]));
    }
    Ok(out)
}

pub fn format_boxes(boxes: &[BBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let [x, y, w, h] = b.to_xywh_one_based();
        s.push_str(&format!("{x},{y},{w},{h}\n"));
    }
    s
}

pub fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    parse_boxes(&text, &path.display().to_string())
}

pub fn write_boxes(path: &Path, boxes: &[BBox]) -> Result<()> {
    fs::write(path, format_boxes(boxes)).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let groundtruth = read_boxes(&dir.join(GROUNDTRUTH_FILE))?;
    let img_dir = dir.join(IMAGE_DIR);
    let mut frames: Vec<PathBuf> = fs::read_dir(&img_dir)
        .map_err(|e| Error::Dataset(format!("{}: {e}", img_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(Error::Dataset(format!("{}: no .ppm frames", img_dir.display())));
    }
    if frames.len() != groundtruth.len() {
        return Err(Error::Dataset(format!(
            "{name}: {} frames but {} groundtruth lines",
            frames.len(),
            groundtruth.len()
        )));
    }
    Ok(Sequence {
        name,
        frames,
        groundtruth,
    })
}

/// A directory that is itself a sequence, or whose subdirectories are.
pub fn load_dataset(root: &Path) -> Result<Vec<Sequence>> {
    if root.join(GROUNDTRUTH_FILE).is_file() {
        return Ok(vec![load_sequence(root)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::Dataset(format!("{}: {e}", root.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUNDTRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Dataset(format!("{}: no sequences found", root.display())));
    }
    dirs.iter().map(|d| load_sequence(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separators_and_round_trip() {
        let boxes = parse_boxes("1,2,3,4\n5\t6\t7.5\t8\n\n9 10 11 12\n", "t").unwrap();
        assert_eq!(boxes.len(), 3);
        assert_eq!(boxes[0], BBox::new(0.0, 1.0, 3.0, 5.0));
        assert_eq!(parse_boxes(&format_boxes(&boxes), "t").unwrap(), boxes);
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let err = parse_boxes("1,2,3,4\n1,2,x,4\n", "gt").unwrap_err().to_string();
        assert!(err.contains("gt:2"), "{err}");
        assert!(parse_boxes("1,2,3\n", "gt").is_err());
    }

    #[test]
    fn frame_names_are_one_based() {
        assert_eq!(frame_file_name(0), "0001.ppm");
        assert_eq!(frame_file_name(59), "0060.ppm");
    }
}

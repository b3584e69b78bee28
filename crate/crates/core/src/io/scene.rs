//! Scene dump: rendered views with their homographies and keypoints.

use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::io::artifacts::{image_path, read_keypoints, write_keypoints, KeypointRow};
use crate::io::image::{load_image, save_image};
use crate::io::table::{format_float, write_table, Table};
use crate::synth::{apply_homography, SceneConfig, SyntheticScene};
use crate::Point2;

pub const HOMOGRAPHIES_FILE: &str = "homographies.csv";
pub const TRUE_KEYPOINTS_FILE: &str = "keypoints_true.csv";
pub const PERTURBED_KEYPOINTS_FILE: &str = "keypoints_perturbed.csv";
pub const SCENE_CONFIG_FILE: &str = "scene.json";
pub const IMAGES_DIR: &str = "images";

const HOMOGRAPHY_HEADER: [&str; 10] = ["view_id", "h00", "h01", "h02", "h10", "h11", "h12", "h20", "h21", "h22"];

fn keypoint_rows(positions: &[Vec<Point2>]) -> Vec<KeypointRow> {
    positions
        .iter()
        .enumerate()
        .flat_map(|(view, pts)| {
            pts.iter().enumerate().map(move |(k, &p)| KeypointRow {
                image_id: view as u32,
                kp_id: k as u32,
                position: p,
            })
        })
        .collect()
}

/// Writes the scene and the perturbed keypoints (`[view][keypoint]`) into `dir`.
pub fn write_scene(dir: &Path, scene: &SyntheticScene, perturbed: &[Vec<Point2>]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for image in &scene.images {
        save_image(&image_path(&dir.join(IMAGES_DIR), image.image_id), image)?;
    }
    write_table(
        &dir.join(HOMOGRAPHIES_FILE),
        &HOMOGRAPHY_HEADER,
        scene.homographies.iter().enumerate().map(|(v, h)| {
            let mut row = vec![v.to_string()];
            // nalgebra iterates column-major; rows are written row-major.
            row.extend(h.transpose().iter().map(|&x| format_float(x)));
            row
        }),
    )?;
    write_keypoints(&dir.join(TRUE_KEYPOINTS_FILE), &keypoint_rows(&scene.projections))?;
    write_keypoints(&dir.join(PERTURBED_KEYPOINTS_FILE), &keypoint_rows(perturbed))?;
    let config = serde_json::to_string_pretty(&scene.config)?;
    let path = dir.join(SCENE_CONFIG_FILE);
    std::fs::write(&path, config + "\n").map_err(|e| Error::io(&path, e))
}

/// Groups keypoint rows into `[view][keypoint]`, requiring view ids `0..V`
/// and keypoint ids `0..N` in every view.
fn grid_positions(path: &Path, rows: &[KeypointRow], num_views: usize) -> Result<Vec<Vec<Point2>>> {
    let mut out: Vec<Vec<Option<Point2>>> = vec![Vec::new(); num_views];
    for r in rows {
        let view = out
            .get_mut(r.image_id as usize)
            .ok_or_else(|| Error::InvalidInput(format!("{}: view {} has no homography", path.display(), r.image_id)))?;
        let k = r.kp_id as usize;
        if view.len() <= k {
            view.resize(k + 1, None);
        }
        view[k] = Some(r.position);
    }
    let n = out.first().map_or(0, Vec::len);
    out.into_iter()
        .enumerate()
        .map(|(v, pts)| {
            if pts.len() != n || pts.iter().any(Option::is_none) {
                return Err(Error::InvalidInput(format!(
                    "{}: view {v} does not list keypoints 0..{n}",
                    path.display()
                )));
            }
            Ok(pts.into_iter().flatten().collect())
        })
        .collect()
}

pub fn read_homographies(path: &Path) -> Result<Vec<Matrix3<f64>>> {
    let mut out = Vec::new();
    Table::open(path, &HOMOGRAPHY_HEADER, &[])?.for_each(|row| {
        let view: usize = row.parse(0)?;
        if view != out.len() {
            return Err(row.error(0, format!("expected view {}, found {view}", out.len())));
        }
        let mut v = [0.0; 9];
        for (k, x) in v.iter_mut().enumerate() {
            *x = row.finite(k + 1)?;
        }
        let h = Matrix3::from_row_slice(&v);
        if h.try_inverse().is_none() {
            return Err(row.error(0, "homography is singular"));
        }
        out.push(h);
        Ok(())
    })?;
    Ok(out)
}

/// Reads a scene dump. Canonical points are recovered from view 0; images
/// are loaded only when `with_images` is set.
pub fn read_scene(dir: &Path, with_images: bool) -> Result<(SyntheticScene, Vec<Vec<Point2>>)> {
    let config_path = dir.join(SCENE_CONFIG_FILE);
    let text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: SceneConfig = serde_json::from_str(&text)?;
    let homographies = read_homographies(&dir.join(HOMOGRAPHIES_FILE))?;
    if homographies.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no views",
            dir.join(HOMOGRAPHIES_FILE).display()
        )));
    }
    let true_path = dir.join(TRUE_KEYPOINTS_FILE);
    let projections = grid_positions(&true_path, &read_keypoints(&true_path)?, homographies.len())?;
    let perturbed_path = dir.join(PERTURBED_KEYPOINTS_FILE);
    let perturbed = grid_positions(&perturbed_path, &read_keypoints(&perturbed_path)?, homographies.len())?;
    let to_canonical = homographies[0].try_inverse().expect("checked on read");
    let canonical_points = projections[0]
        .iter()
        .map(|&p| apply_homography(&to_canonical, p))
        .collect();
    let images = if with_images {
        (0..homographies.len())
            .map(|v| load_image(&image_path(&dir.join(IMAGES_DIR), v as u32), v as u32))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let scene = SyntheticScene {
        config,
        homographies,
        images,
        canonical_points,
        projections,
    };
    Ok((scene, perturbed))
}

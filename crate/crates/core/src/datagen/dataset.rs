//! Corpus generation and the dataset manifest.
//!
//! `manifest.txt` is UTF-8, one record per line:
//!
//! ```text
//! version 1
//! # id seed observed background streaks transmittance light depth spec
//! scene_0000<TAB>…
//! ```
//!
//! Fields are tab separated in the order of the comment line. `streaks` is a
//! comma-separated list ordered like the scene's bins, `depth` is `-` for
//! unveiled scenes and `spec` is the [`RainSceneSpec::echo`] of the scene.
//! Paths are relative to the manifest's directory. Lines starting with `#`
//! are comments.

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;

use super::spec::RainSceneSpec;
use super::streak::component_areas;
use super::{render_scene, stream, RenderedScene};
use crate::error::{Error, Result};
use crate::io::{read_raw, write_bytes, write_png, write_raw};
use crate::rain::RainScene;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MANIFEST_VERSION: u32 = 1;
const FIELDS: &str = "# id\tseed\tobserved\tbackground\tstreaks\ttransmittance\tlight\tdepth\tspec";
const SCENE_SEED_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub observed: PathBuf,
    pub background: PathBuf,
    pub streaks: Vec<PathBuf>,
    pub transmittance: PathBuf,
    pub light: PathBuf,
    pub depth: Option<PathBuf>,
    pub spec: RainSceneSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Seed of scene `index` under a master seed.
pub fn scene_seed(master: u64, index: usize) -> u64 {
    stream(master, SCENE_SEED_STREAM + index as u64).next_u64()
}

impl ManifestEntry {
    fn to_line(&self) -> String {
        let p = |p: &Path| p.to_string_lossy().into_owned();
        [
            self.id.clone(),
            self.seed.to_string(),
            p(&self.observed),
            p(&self.background),
            self.streaks.iter().map(|s| p(s)).collect::<Vec<_>>().join(","),
            p(&self.transmittance),
            p(&self.light),
            self.depth.as_deref().map(p).unwrap_or_else(|| "-".into()),
            self.spec.echo(),
        ]
        .join("\t")
    }

    fn from_line(line: &str, path: &Path, lineno: usize) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, format!("line {lineno}: {msg}"));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 9 {
            return Err(bad(&format!("expected 9 fields, found {}", fields.len())));
        }
        let streaks = if fields[4].is_empty() {
            Vec::new()
        } else {
            fields[4].split(',').map(PathBuf::from).collect()
        };
        Ok(ManifestEntry {
            id: fields[0].to_string(),
            seed: fields[1].parse().map_err(|_| bad("bad seed"))?,
            observed: fields[2].into(),
            background: fields[3].into(),
            streaks,
            transmittance: fields[5].into(),
            light: fields[6].into(),
            depth: (fields[7] != "-").then(|| fields[7].into()),
            spec: RainSceneSpec::from_echo(fields[8]).map_err(|e| bad(&e.to_string()))?,
        })
    }

    /// Every file this entry references, relative to `root`.
    pub fn files(&self, root: &Path) -> Vec<PathBuf> {
        let mut files = vec![root.join(&self.observed), root.join(&self.background)];
        files.extend(self.streaks.iter().map(|s| root.join(s)));
        files.push(root.join(&self.transmittance));
        files.push(root.join(&self.light));
        files.extend(self.depth.iter().map(|d| root.join(d)));
        files
    }

    pub fn load_scene(&self, root: &Path) -> Result<RainScene> {
        let light_path = root.join(&self.light);
        let light = read_raw(&light_path)?;
        if !light.is_scalar() {
            return Err(Error::format(light_path, "atmospheric light must be a single value"));
        }
        let beta = match &self.depth {
            Some(_) => beta_of(&self.spec),
            None => 0.0,
        };
        Ok(RainScene {
            background: read_raw(&root.join(&self.background))?,
            streaks: self
                .streaks
                .iter()
                .map(|s| read_raw(&root.join(s)))
                .collect::<Result<_>>()?,
            bins: self.spec.bin_labels(),
            transmittance: read_raw(&root.join(&self.transmittance))?,
            atmospheric_light: light.data()[0],
            observed: read_raw(&root.join(&self.observed))?,
            depth: self
                .depth
                .as_ref()
                .map(|d| read_raw(&root.join(d)))
                .transpose()?,
            beta,
        })
    }
}

/// The attenuation a scene actually used; it is re-drawn from the spec's
/// seed exactly as [`render_scene`] draws it.
fn beta_of(spec: &RainSceneSpec) -> f64 {
    let mut scalars = stream(spec.seed, super::STREAM_SCALARS);
    spec.beta.sample(&mut scalars)
}

impl DatasetManifest {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            root: root.into(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("version {}\n{FIELDS}\n", self.version);
        for e in &self.entries {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.path();
        write_bytes(&path, self.to_text().as_bytes())?;
        Ok(path)
    }

    /// Loads a manifest file, or `manifest.txt` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().enumerate();
        let version = match lines.next() {
            Some((_, first)) => first
                .strip_prefix("version ")
                .and_then(|v| v.trim().parse::<u32>().ok())
                .ok_or_else(|| Error::format(&path, "first line must be `version <n>`"))?,
            None => return Err(Error::format(&path, "empty manifest")),
        };
        if version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported manifest version {version}")));
        }
        let entries = lines
            .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
            .map(|(i, l)| ManifestEntry::from_line(l, &path, i + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetManifest {
            version,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }

    pub fn load_scene(&self, index: usize) -> Result<RainScene> {
        self.entries[index].load_scene(&self.root)
    }

    pub fn load_all(&self) -> Result<Vec<RainScene>> {
        (0..self.len()).map(|i| self.load_scene(i)).collect()
    }

    /// Loads every scene and checks scene invariants plus streak-bin
    /// membership of every connected component. Returns the component count.
    pub fn check(&self) -> Result<usize> {
        let missing: Vec<PathBuf> = self
            .entries
            .iter()
            .flat_map(|e| e.files(&self.root))
            .filter(|f| !f.is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Missing(missing));
        }
        let mut components = 0;
        for (i, entry) in self.entries.iter().enumerate() {
            let scene = self.load_scene(i)?;
            scene.check_invariants().map_err(|e| {
                Error::format(self.path(), format!("{}: {e}", entry.id))
            })?;
            for (layer, bin) in scene.streaks.iter().zip(&scene.bins) {
                for area in component_areas(layer)? {
                    if !bin.contains(area) {
                        return Err(Error::format(
                            self.path(),
                            format!("{}: {bin} streak with area {area}", entry.id),
                        ));
                    }
                    components += 1;
                }
            }
        }
        Ok(components)
    }
}

fn write_scene(out_dir: &Path, id: &str, seed: u64, rendered: &RenderedScene, spec: &RainSceneSpec) -> Result<ManifestEntry> {
    let scene = &rendered.scene;
    let dir = out_dir.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| PathBuf::from(id).join(name);

    let mut entry = ManifestEntry {
        id: id.to_string(),
        seed,
        observed: rel("O.drf"),
        background: rel("B.drf"),
        streaks: scene
            .bins
            .iter()
            .map(|b| rel(&format!("R_{b}.drf")))
            .collect(),
        transmittance: rel("alpha.drf"),
        light: rel("A.drf"),
        depth: None,
        spec: spec.clone(),
    };
    write_raw(&out_dir.join(&entry.observed), &scene.observed)?;
    write_raw(&out_dir.join(&entry.background), &scene.background)?;
    for (path, layer) in entry.streaks.iter().zip(&scene.streaks) {
        write_raw(&out_dir.join(path), layer)?;
    }
    write_raw(&out_dir.join(&entry.transmittance), &scene.transmittance)?;
    write_raw(
        &out_dir.join(&entry.light),
        &crate::Tensor::scalar(scene.atmospheric_light),
    )?;
    if let Some(depth) = &scene.depth {
        let path = rel("depth.drf");
        write_raw(&out_dir.join(&path), depth)?;
        entry.depth = Some(path);
    }
    write_png(&dir.join("O.png"), &scene.observed)?;
    write_png(&dir.join("B.png"), &scene.background)?;
    Ok(entry)
}

/// Renders `count` scenes from `template` (its seed is the master seed) and
/// writes them plus `manifest.txt` under `out_dir`.
pub fn generate_dataset(template: &RainSceneSpec, count: usize, out_dir: &Path) -> Result<DatasetManifest> {
    template.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let specs: Vec<RainSceneSpec> = (0..count)
        .map(|i| template.with_seed(scene_seed(template.seed, i)))
        .collect();
    let rendered: Vec<RenderedScene> = specs
        .par_iter()
        .map(render_scene)
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest::empty(out_dir);
    for (i, (spec, scene)) in specs.iter().zip(&rendered).enumerate() {
        let id = format!("scene_{i:04}");
        manifest
            .entries
            .push(write_scene(out_dir, &id, spec.seed, scene, spec)?);
    }
    manifest.write()?;
    Ok(manifest)
}

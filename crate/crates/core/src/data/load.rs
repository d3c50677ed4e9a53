use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use log::info;

use super::featurize::hashed_bag_of_words;
use super::{DataError, Dataset, Domain, Interaction, Result};
use crate::tensor::Tensor;

/// Bucket count of the fallback featurizer.
pub const DEFAULT_FEATURE_DIM: usize = 32;

/// Where to read per-entity feature vectors from. Missing files fall back to a
/// hashed bag-of-words of the entity id when `fallback_dim` is set.
#[derive(Clone, Debug, Default)]
pub struct FeatureSources {
    pub users: Option<PathBuf>,
    pub items: [Option<PathBuf>; 2],
    pub fallback_dim: Option<usize>,
}

/// Conventional file names inside a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub interactions: PathBuf,
    pub user_features: PathBuf,
    pub item_features: [PathBuf; 2],
    pub labels: PathBuf,
}

impl DatasetPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            interactions: dir.join("interactions.tsv"),
            user_features: dir.join("user_features.tsv"),
            item_features: [dir.join("item_features_S.tsv"), dir.join("item_features_T.tsv")],
            labels: dir.join("labels.tsv"),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { path: path.to_owned(), line, msg: msg.into() }
}

/// Reads `user<TAB>item<TAB>domain<TAB>rating[<TAB>timestamp]` rows and min-max
/// normalizes ratings into `[0, 1]`. Blank lines and `#` comments are skipped.
pub fn parse_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 && f.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 4 or 5 fields, got {}", f.len())));
        }
        let domain = match f[2].trim() {
            "S" | "s" => Domain::S,
            "T" | "t" => Domain::T,
            other => return Err(parse_err(path, lineno, format!("unknown domain {other:?}"))),
        };
        let rating: f64 = f[3].trim().parse().map_err(|_| parse_err(path, lineno, format!("bad rating {:?}", f[3])))?;
        if !rating.is_finite() {
            return Err(parse_err(path, lineno, "non-finite rating"));
        }
        let timestamp = match f.get(4) {
            Some(t) if !t.trim().is_empty() => {
                Some(t.trim().parse::<i64>().map_err(|_| parse_err(path, lineno, format!("bad timestamp {t:?}")))?)
            }
            _ => None,
        };
        if f[0].is_empty() || f[1].is_empty() {
            return Err(parse_err(path, lineno, "empty id"));
        }
        out.push(Interaction { user: f[0].to_owned(), item: f[1].to_owned(), domain, rating, timestamp });
    }
    let (lo, hi) =
        out.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.rating), hi.max(r.rating)));
    for r in &mut out {
        r.rating = if hi > lo { (r.rating - lo) / (hi - lo) } else { 1.0 };
    }
    Ok(out)
}

/// Reads `entity<TAB>f1,f2,...` rows. All rows must share one dimension.
pub fn read_feature_file(path: &Path) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut map = HashMap::new();
    let mut dim = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, vals) = line.split_once('\t').ok_or_else(|| parse_err(path, n + 1, "expected entity<TAB>values"))?;
        let v = vals
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, n + 1, format!("bad feature value: {e}")))?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(DataError::FeatureDim { entity: id.to_owned(), expected: d, got: v.len() })
            }
            _ => {}
        }
        map.insert(id.to_owned(), v);
    }
    Ok((dim.unwrap_or(0), map))
}

pub fn write_feature_file(path: &Path, ids: &[String], features: &Tensor) -> Result<()> {
    let mut s = String::new();
    for (r, id) in ids.iter().enumerate() {
        let vals: Vec<String> = features.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{id}\t{}", vals.join(","));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Reads a header-prefixed TSV of raw attributes: `id<TAB>col1<TAB>...`.
pub fn read_attribute_table(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing header"))?
        .split('\t')
        .skip(1)
        .map(str::to_owned)
        .collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut f = line.split('\t');
        ids.push(f.next().unwrap_or_default().to_owned());
        let row: Vec<String> = f.map(str::to_owned).collect();
        if row.len() != header.len() {
            return Err(parse_err(path, n + 2, format!("expected {} attributes, got {}", header.len(), row.len())));
        }
        rows.push(row);
    }
    Ok((header, ids, rows))
}

fn feature_table(ids: &[String], source: Option<&Path>, fallback_dim: Option<usize>, kind: &str) -> Result<Tensor> {
    let (dim, map) = match source {
        Some(p) => read_feature_file(p)?,
        None => (fallback_dim.unwrap_or(0), HashMap::new()),
    };
    if source.is_none() && fallback_dim.is_none() {
        return Err(DataError::MissingFeatures(format!("{kind} (no feature file)")));
    }
    let mut data = Vec::with_capacity(ids.len() * dim);
    for id in ids {
        match map.get(id) {
            Some(v) => data.extend_from_slice(v),
            None => match fallback_dim {
                Some(fd) if fd == dim => data.extend(hashed_bag_of_words(&format!("{kind} {id}"), dim)),
                Some(fd) => return Err(DataError::FeatureDim { entity: id.clone(), expected: dim, got: fd }),
                None => return Err(DataError::MissingFeatures(format!("{kind} {id}"))),
            },
        }
    }
    Ok(Tensor::new([ids.len(), dim], data)?)
}

/// Loads an interaction log, filters to a fixpoint where every user and item has
/// at least `min_interactions` interactions, and attaches feature tables.
pub fn load_dataset(interactions: &Path, features: &FeatureSources, min_interactions: usize) -> Result<Dataset> {
    let rows = parse_interactions(interactions)?;

    // Dedupe (user, domain, item), keeping the latest timestamp.
    let mut seen: HashMap<(&str, Domain, &str), usize> = HashMap::new();
    let mut unique: Vec<&Interaction> = Vec::new();
    for r in &rows {
        match seen.get(&(r.user.as_str(), r.domain, r.item.as_str())) {
            Some(&k) => {
                if r.timestamp > unique[k].timestamp {
                    unique[k] = r;
                }
            }
            None => {
                seen.insert((r.user.as_str(), r.domain, r.item.as_str()), unique.len());
                unique.push(r);
            }
        }
    }

    let mut alive = vec![true; unique.len()];
    loop {
        let mut ucount: HashMap<&str, usize> = HashMap::new();
        let mut icount: HashMap<(Domain, &str), usize> = HashMap::new();
        for (r, _) in unique.iter().zip(&alive).filter(|(_, a)| **a) {
            *ucount.entry(r.user.as_str()).or_default() += 1;
            *icount.entry((r.domain, r.item.as_str())).or_default() += 1;
        }
        let mut changed = false;
        for (r, a) in unique.iter().zip(alive.iter_mut()) {
            if *a
                && (ucount[r.user.as_str()] < min_interactions
                    || icount[&(r.domain, r.item.as_str())] < min_interactions)
            {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut users: Vec<String> = Vec::new();
    let mut uidx: HashMap<&str, usize> = HashMap::new();
    let mut items: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut iidx: [HashMap<&str, usize>; 2] = [HashMap::new(), HashMap::new()];
    let mut triples: Vec<(usize, usize, usize, Option<i64>)> = Vec::new();
    for (r, _) in unique.iter().zip(&alive).filter(|(_, a)| **a) {
        let u = *uidx.entry(r.user.as_str()).or_insert_with(|| {
            users.push(r.user.clone());
            users.len() - 1
        });
        let d = r.domain.index();
        let i = *iidx[d].entry(r.item.as_str()).or_insert_with(|| {
            items[d].push(r.item.clone());
            items[d].len() - 1
        });
        triples.push((d, u, i, r.timestamp));
    }

    let nu = users.len();
    let mut pairs: [Vec<Vec<(usize, Option<i64>)>>; 2] = [vec![Vec::new(); nu], vec![Vec::new(); nu]];
    for (d, u, i, t) in triples {
        pairs[d][u].push((i, t));
    }
    let mut positives: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut timestamps: [Vec<Vec<Option<i64>>>; 2] = [Vec::new(), Vec::new()];
    for d in 0..2 {
        for list in &mut pairs[d] {
            list.sort_unstable_by_key(|p| p.0);
        }
        positives[d] = pairs[d].iter().map(|l| l.iter().map(|p| p.0).collect()).collect();
        timestamps[d] = pairs[d].iter().map(|l| l.iter().map(|p| p.1).collect()).collect();
    }

    let user_features = feature_table(&users, features.users.as_deref(), features.fallback_dim, "user")?;
    let item_features = [
        feature_table(&items[0], features.items[0].as_deref(), features.fallback_dim, "item_S")?,
        feature_table(&items[1], features.items[1].as_deref(), features.fallback_dim, "item_T")?,
    ];

    let ds = Dataset {
        users,
        items,
        positives,
        timestamps,
        withheld: [vec![Vec::new(); nu], vec![Vec::new(); nu]],
        user_features,
        item_features,
    };
    ds.validate()?;
    info!(
        "loaded {}: {} users, {}/{} items, {}/{} interactions, {} overlapping",
        interactions.display(),
        ds.n_users(),
        ds.n_items(Domain::S),
        ds.n_items(Domain::T),
        ds.n_interactions(Domain::S),
        ds.n_interactions(Domain::T),
        ds.overlap_users().len()
    );
    Ok(ds)
}

/// Loads the conventional directory layout; absent feature files use the fallback featurizer.
pub fn load_dataset_dir(dir: &Path, min_interactions: usize) -> Result<Dataset> {
    let p = DatasetPaths::new(dir);
    let existing = |f: &PathBuf| f.exists().then(|| f.clone());
    let sources = FeatureSources {
        users: existing(&p.user_features),
        items: [existing(&p.item_features[0]), existing(&p.item_features[1])],
        fallback_dim: None,
    };
    let needs_fallback = sources.users.is_none() || sources.items.iter().any(Option::is_none);
    let sources = if needs_fallback {
        // The fallback must match any dimension supplied by files that do exist.
        let dims: Vec<usize> = [&sources.users, &sources.items[0], &sources.items[1]]
            .into_iter()
            .flatten()
            .map(|f| read_feature_file(f).map(|(d, _)| d))
            .collect::<Result<_>>()?;
        let dim = dims.first().copied().unwrap_or(DEFAULT_FEATURE_DIM);
        FeatureSources { fallback_dim: Some(dim), ..sources }
    } else {
        sources
    };
    load_dataset(&p.interactions, &sources, min_interactions)
}

/// Writes the interaction log (training and withheld rows), feature files and,
/// when given, a labels file `user<TAB>w1,...,wK`.
pub fn write_dataset_dir(ds: &Dataset, dir: &Path, labels: Option<&[Vec<f64>]>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = DatasetPaths::new(dir);
    let mut s = String::new();
    for u in 0..ds.n_users() {
        for d in Domain::ALL {
            let di = d.index();
            let mut rows: Vec<(usize, Option<i64>)> =
                ds.positives[di][u].iter().copied().zip(ds.timestamps[di][u].iter().copied()).collect();
            rows.extend(ds.withheld[di][u].iter().map(|&i| (i, None)));
            for (i, t) in rows {
                let _ = write!(s, "{}\t{}\t{d}\t1", ds.users[u], ds.items[di][i]);
                if let Some(t) = t {
                    let _ = write!(s, "\t{t}");
                }
                s.push('\n');
            }
        }
    }
    fs::write(&p.interactions, s)?;
    write_feature_file(&p.user_features, &ds.users, &ds.user_features)?;
    for d in 0..2 {
        write_feature_file(&p.item_features[d], &ds.items[d], &ds.item_features[d])?;
    }
    if let Some(labels) = labels {
        let mut s = String::new();
        for (u, w) in ds.users.iter().zip(labels) {
            let vals: Vec<String> = w.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{u}\t{}", vals.join(","));
        }
        fs::write(&p.labels, s)?;
    }
    Ok(())
}

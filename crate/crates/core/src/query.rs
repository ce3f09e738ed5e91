//! Read-side queries over a loaded dataset: windows of day scenes, the
//! scented-widget series and node details. The HTTP service and the CLI
//! exporter both go through here so their output is identical.

use serde::{Deserialize, Serialize};

use crate::corpus::Dictionary;
use crate::error::{Error, Result};
use crate::explore::{
    find_max_antichain, order_antichain, AntichainEntry, ScoreMode, Scorer, SeriesPoint,
};
use crate::layout::{
    build_scene, match_color, sentiment_color, Color, LayoutScene, SceneStyle, View,
};
use crate::sentiment::ClusterSentiment;
use crate::store::Dataset;

pub const DEFAULT_WINDOW_LEN: usize = 6;
pub const DEFAULT_WORD_CAP: usize = 10;
pub const DETAIL_TERMS: usize = 50;

/// Raw query parameters as they arrive on the wire or the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub mode: Option<String>,
    pub q: Option<String>,
    pub step: Option<usize>,
    pub node: Option<usize>,
    pub theta: Option<f64>,
    pub start: Option<usize>,
    pub len: Option<usize>,
    pub view: Option<String>,
    pub word_cap: Option<usize>,
}

impl QueryParams {
    pub fn score_mode(&self) -> Result<ScoreMode> {
        let name = self
            .mode
            .as_deref()
            .ok_or_else(|| Error::Invalid("missing `mode`".into()))?;
        ScoreMode::parse(name, self.q.as_deref(), self.step, self.node)
    }

    pub fn window_query(&self) -> Result<WindowQuery> {
        let view = match self.view.as_deref() {
            Some(v) => v.parse().map_err(Error::Invalid)?,
            None => View::Treemap,
        };
        Ok(WindowQuery {
            mode: self.score_mode()?,
            window_start: self.start.unwrap_or(0),
            window_len: self.len,
            view,
            word_cap: self.word_cap.unwrap_or(DEFAULT_WORD_CAP),
            theta: self.theta,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowQuery {
    pub mode: ScoreMode,
    pub window_start: usize,
    /// Defaults to [`DEFAULT_WINDOW_LEN`], shortened to the steps left after `window_start`.
    pub window_len: Option<usize>,
    pub view: View,
    pub word_cap: usize,
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResponse {
    pub dataset: String,
    #[serde(flatten)]
    pub mode: ScoreMode,
    pub view: View,
    pub theta: f64,
    pub window_start: usize,
    pub window_len: usize,
    pub scenes: Vec<LayoutScene>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesResponse {
    pub dataset: String,
    #[serde(flatten)]
    pub mode: ScoreMode,
    pub theta: f64,
    pub points: Vec<SeriesPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDetail {
    pub dataset: String,
    pub step: usize,
    pub label: String,
    pub node: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub size: usize,
    pub tags: Vec<(String, f64)>,
    pub sentiment: Option<ClusterSentiment>,
    /// Heaviest centroid terms.
    pub centroid: Vec<(String, f64)>,
}

fn resolve_theta(dataset: &Dataset, theta: Option<f64>) -> Result<f64> {
    let theta = theta.unwrap_or(dataset.manifest.config.theta);
    if theta >= 0.0 && theta.is_finite() {
        Ok(theta)
    } else {
        Err(Error::Invalid(format!(
            "theta must be a non-negative number, got {theta}"
        )))
    }
}

fn check_window(dataset: &Dataset, start: usize, len: usize) -> Result<()> {
    let steps = dataset.step_count();
    if len == 0 || start >= steps || start + len > steps {
        return Err(Error::Invalid(format!(
            "window {start}..{} is outside 0..{steps}",
            start + len
        )));
    }
    Ok(())
}

fn prepare(dataset: &Dataset, mode: &ScoreMode) -> Result<Scorer> {
    if let ScoreMode::Similar { step, node } = mode {
        dataset.node(*step, *node)?;
    }
    Scorer::prepare(
        mode,
        dataset.available_steps(),
        &dataset.dictionary,
        |s, n| dataset.node(s, n).ok(),
    )
}

/// One scene per day of the window, each built from that day's ordered antichain.
pub fn window(
    dataset: &Dataset,
    query: &WindowQuery,
    style: &SceneStyle,
) -> Result<WindowResponse> {
    let len = query.window_len.unwrap_or_else(|| {
        DEFAULT_WINDOW_LEN.min(dataset.step_count().saturating_sub(query.window_start))
    });
    check_window(dataset, query.window_start, len)?;
    let theta = resolve_theta(dataset, query.theta)?;
    let scorer = prepare(dataset, &query.mode)?;
    let days: Vec<usize> = (query.window_start..query.window_start + len).collect();

    let mut ordered: Vec<Vec<AntichainEntry>> = Vec::with_capacity(days.len());
    for &day in &days {
        let hierarchy = dataset.step(day)?;
        let antichain = find_max_antichain(&scorer.score_tree(hierarchy, theta)?);
        let order = order_antichain(&antichain);
        ordered.push(
            order
                .into_iter()
                .map(|id| {
                    antichain
                        .entries
                        .iter()
                        .find(|e| e.node == id)
                        .expect("ordered ids come from the antichain")
                        .clone()
                })
                .collect(),
        );
    }

    // sentiment saturation is relative to the most extreme displayed cluster
    let sentiment = query.mode.is_sentiment();
    let mut max_abs = 0.0f64;
    if sentiment {
        for (&day, entries) in days.iter().zip(&ordered) {
            let hierarchy = dataset.step(day)?;
            for e in entries {
                if let Some(s) = hierarchy.nodes[e.node].sentiment {
                    max_abs = max_abs.max(s.h.abs());
                }
            }
        }
    }

    let mut scenes = Vec::with_capacity(days.len());
    for (&day, entries) in days.iter().zip(&ordered) {
        let hierarchy = dataset.step(day)?;
        let color_of = |node: usize, score: f64| -> Color {
            if sentiment {
                hierarchy.nodes[node]
                    .sentiment
                    .map_or(Color::NEUTRAL, |s| sentiment_color(s.h, max_abs))
            } else {
                match_color(score)
            }
        };
        scenes.push(build_scene(
            day,
            dataset.label(day),
            hierarchy,
            entries,
            query.view,
            query.word_cap,
            style,
            color_of,
        )?);
    }

    Ok(WindowResponse {
        dataset: dataset.id().to_string(),
        mode: query.mode.clone(),
        view: query.view,
        theta,
        window_start: query.window_start,
        window_len: len,
        scenes,
    })
}

/// Scented-widget values for every step, or for `range = (start, len)`.
pub fn series(
    dataset: &Dataset,
    mode: &ScoreMode,
    theta: Option<f64>,
    range: Option<(usize, usize)>,
) -> Result<SeriesResponse> {
    let (start, len) = range.unwrap_or((0, dataset.step_count()));
    check_window(dataset, start, len)?;
    let theta = resolve_theta(dataset, theta)?;
    let scorer = prepare(dataset, mode)?;
    let points = (start..start + len)
        .map(|step| crate::explore::series_point(dataset.step(step)?, &scorer, theta))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeriesResponse {
        dataset: dataset.id().to_string(),
        mode: mode.clone(),
        theta,
        points,
    })
}

pub fn node_detail(dataset: &Dataset, step: usize, node: usize) -> Result<NodeDetail> {
    let n = dataset.node(step, node)?;
    Ok(NodeDetail {
        dataset: dataset.id().to_string(),
        step,
        label: dataset.label(step).to_string(),
        node,
        parent: n.parent,
        children: n.children.clone(),
        size: n.size,
        tags: n.tags.clone(),
        sentiment: n.sentiment,
        centroid: top_terms(&n.centroid, &dataset.dictionary, DETAIL_TERMS),
    })
}

fn top_terms(
    v: &crate::corpus::SparseTermVector,
    dictionary: &Dictionary,
    m: usize,
) -> Vec<(String, f64)> {
    let mut terms: Vec<(&str, f64)> = v
        .iter()
        .filter_map(|(t, w)| dictionary.term(t).map(|s| (s, w)))
        .collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    terms
        .into_iter()
        .take(m)
        .map(|(t, w)| (t.to_string(), w))
        .collect()
}

/// Canonical JSON encoding of query results.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("query results serialize");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterHierarchy, ClusterNode};
    use crate::corpus::{SparseTermVector, TermWeighting};
    use crate::store::{ConfigEcho, Manifest, Stage, StepSummary};

    fn toy() -> Dataset {
        let dictionary =
            Dictionary::build([&vec!["debate".to_string(), "rain".into(), "vote".into()]]);
        let (debate, rain, vote) = (0, 1, 2);
        let node =
            |id, parent, children: Vec<usize>, size, centroid: &[(u32, f64)], h: f64, tag: &str| {
                ClusterNode {
                    id,
                    parent,
                    children,
                    members: Vec::new(),
                    size,
                    centroid: SparseTermVector::from_pairs(centroid.iter().copied()).normalized(),
                    tags: vec![(tag.to_string(), 0.5)],
                    sentiment: Some(ClusterSentiment {
                        h,
                        mu_pc: 0.0,
                        mu_nc: 0.0,
                    }),
                }
            };
        let day = |step, h: [f64; 4]| ClusterHierarchy {
            step_index: step,
            root: 3,
            nodes: vec![
                node(0, Some(3), vec![], 3, &[(vote, 1.0)], h[0], "vote"),
                node(1, Some(3), vec![], 2, &[(rain, 1.0)], h[1], "rain"),
                node(
                    2,
                    Some(3),
                    vec![],
                    1,
                    &[(debate, 1.0), (vote, 0.2)],
                    h[2],
                    "debate",
                ),
                node(
                    3,
                    None,
                    vec![0, 1, 2],
                    6,
                    &[(vote, 0.6), (rain, 0.3), (debate, 0.1)],
                    h[3],
                    "vote",
                ),
            ],
        };
        let manifest = Manifest {
            id: "toy".into(),
            stage: Stage::Complete,
            complete: true,
            step_count: 3,
            labels: vec!["t1".into(), "t2".into(), "t3".into()],
            time: None,
            steps: vec![
                StepSummary {
                    posts: 6,
                    users: 6,
                    clusterable: 6,
                    tokens: 12
                };
                3
            ],
            config: ConfigEcho {
                weighting: TermWeighting::Tf,
                theta: 0.2,
                clustering: None,
                sentiment: None,
            },
        };
        Dataset::new(
            manifest,
            dictionary,
            vec![
                Some(day(0, [1.0, -2.0, 0.5, 0.0])),
                Some(day(1, [0.0, 0.0, 0.0, 0.0])),
                Some(day(2, [-0.5, 3.0, -1.0, 0.2])),
            ],
        )
    }

    fn query(mode: ScoreMode, view: View) -> WindowQuery {
        WindowQuery {
            mode,
            window_start: 0,
            window_len: Some(3),
            view,
            word_cap: 10,
            theta: None,
        }
    }

    #[test]
    fn default_window_fits_the_dataset() {
        let ds = toy();
        let style = SceneStyle::default();
        let mut q = WindowQuery {
            window_len: None,
            ..query(ScoreMode::PosNeg, View::List)
        };
        let r = window(&ds, &q, &style).unwrap();
        assert_eq!((r.window_len, r.scenes.len()), (3, 3));
        q.window_start = 2;
        assert_eq!(window(&ds, &q, &style).unwrap().window_len, 1);
        q.window_len = Some(2);
        assert!(matches!(window(&ds, &q, &style), Err(Error::Invalid(_))));
    }

    #[test]
    fn posneg_series_has_one_point_per_step() {
        let ds = toy();
        let s = series(&ds, &ScoreMode::PosNeg, None, None).unwrap();
        let pairs: Vec<(f64, f64)> = s
            .points
            .iter()
            .map(|p| (p.max_positive.unwrap(), p.max_negative.unwrap()))
            .collect();
        assert_eq!(pairs, [(1.0, 2.0), (0.0, 0.0), (3.0, 1.0)]);
    }

    #[test]
    fn unknown_search_term_gives_zero_series() {
        let ds = toy();
        let s = series(
            &ds,
            &ScoreMode::Search {
                term: "nonexistentterm".into(),
            },
            None,
            None,
        )
        .unwrap();
        assert!(s.points.iter().all(|p| p.users == Some(0)));
    }

    #[test]
    fn search_series_counts_matching_users() {
        let ds = toy();
        let s = series(
            &ds,
            &ScoreMode::Search {
                term: "vote".into(),
            },
            None,
            None,
        )
        .unwrap();
        // vote leaf scores 1.0 and the debate leaf 0.2/|(1,0.2)| relative to it
        assert_eq!(s.points[0].users, Some(3));
    }

    #[test]
    fn negative_list_is_ordered_by_minus_h() {
        let ds = toy();
        let r = window(
            &ds,
            &query(ScoreMode::Negative, View::List),
            &SceneStyle::default(),
        )
        .unwrap();
        let items = r.scenes[0].items.as_ref().unwrap();
        let hs: Vec<f64> = items
            .iter()
            .map(|i| -ds.step(0).unwrap().nodes[i.node_id].sentiment.unwrap().h)
            .collect();
        assert!(hs.windows(2).all(|w| w[0] >= w[1]), "{hs:?}");
        assert_eq!(r.scenes.len(), 3);
    }

    #[test]
    fn scenes_match_the_echoed_antichain() {
        let ds = toy();
        for view in [View::Treemap, View::List] {
            let r = window(&ds, &query(ScoreMode::PosNeg, view), &SceneStyle::default()).unwrap();
            for scene in &r.scenes {
                let echoed = scene.antichain.iter().map(|e| e.node).collect();
                assert_eq!(scene.node_ids(), echoed);
            }
        }
    }

    #[test]
    fn sentiment_saturation_uses_window_max() {
        let ds = toy();
        let r = window(
            &ds,
            &query(ScoreMode::PosNeg, View::List),
            &SceneStyle::default(),
        )
        .unwrap();
        let sat: Vec<f64> = r
            .scenes
            .iter()
            .flat_map(|s| s.items.as_ref().unwrap().iter().map(|i| i.color.saturation))
            .collect();
        assert!(sat.contains(&1.0));
        assert!(sat.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn similar_to_self_scores_one() {
        let ds = toy();
        let d = node_detail(&ds, 0, 1).unwrap();
        assert_eq!(d.tags[0].0, "rain");
        let r = window(
            &ds,
            &query(
                ScoreMode::Similar {
                    step: d.step,
                    node: d.node,
                },
                View::List,
            ),
            &SceneStyle::default(),
        )
        .unwrap();
        let own = r.scenes[0].antichain.iter().find(|e| e.node == 1).unwrap();
        assert!((own.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn root_detail_has_step_user_count() {
        let ds = toy();
        let d = node_detail(&ds, 2, 3).unwrap();
        assert_eq!(d.size, 6);
        assert_eq!(d.centroid[0].0, "vote");
        assert!(matches!(
            node_detail(&ds, 2, 9),
            Err(Error::UnknownNode { .. })
        ));
    }

    #[test]
    fn window_validation() {
        let ds = toy();
        let mut q = query(ScoreMode::Positive, View::Treemap);
        q.window_len = Some(1);
        assert_eq!(
            window(&ds, &q, &SceneStyle::default())
                .unwrap()
                .scenes
                .len(),
            1
        );
        q.window_start = 2;
        q.window_len = Some(2);
        assert!(window(&ds, &q, &SceneStyle::default()).is_err());
        q.window_len = Some(0);
        assert!(window(&ds, &q, &SceneStyle::default()).is_err());
        assert!(series(&ds, &ScoreMode::Positive, None, Some((3, 1))).is_err());
        q.window_len = Some(1);
        q.theta = Some(-1.0);
        assert!(window(&ds, &q, &SceneStyle::default()).is_err());
    }

    #[test]
    fn missing_step_is_named() {
        let mut ds = toy();
        let manifest = ds.manifest.clone();
        let dictionary = ds.dictionary.clone();
        let steps = vec![
            Some(ds.step(0).unwrap().clone()),
            None,
            Some(ds.step(2).unwrap().clone()),
        ];
        ds = Dataset::new(manifest, dictionary, steps);
        let err = window(
            &ds,
            &query(ScoreMode::Positive, View::List),
            &SceneStyle::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingStep(1)));
    }

    #[test]
    fn repeated_requests_are_byte_identical() {
        let ds = toy();
        let q = query(
            ScoreMode::Search {
                term: "vote".into(),
            },
            View::Treemap,
        );
        let a = to_json_bytes(&window(&ds, &q, &SceneStyle::default()).unwrap());
        let b = to_json_bytes(&window(&ds, &q, &SceneStyle::default()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn params_parse() {
        let p = QueryParams {
            mode: Some("search".into()),
            q: Some("Vote".into()),
            ..Default::default()
        };
        let q = p.window_query().unwrap();
        assert_eq!(
            q.mode,
            ScoreMode::Search {
                term: "vote".into()
            }
        );
        assert_eq!(
            (q.window_len, q.word_cap, q.view),
            (None, 10, View::Treemap)
        );
        let bad = QueryParams {
            mode: Some("bogus".into()),
            ..Default::default()
        };
        assert!(bad.window_query().is_err());
        let bad_view = QueryParams {
            mode: Some("positive".into()),
            view: Some("grid".into()),
            ..Default::default()
        };
        assert!(bad_view.window_query().is_err());
    }
}

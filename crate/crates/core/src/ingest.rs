//! Forum export parsing, filtering and the normalized corpus format.
//!
//! Three inputs are understood:
//!
//! * MOOC exports: `{"threads": [{"thread_id", "posts": [{..post, "comments": [..post]}]}]}`
//!   (a bare array of threads is accepted too);
//! * Q&A exports: `{"questions": [{"question_id", "question": post, "answers": [answer],
//!   "followups": [{..post, "replies": [..post]}]}]}` where an answer block is
//!   `{"answer_id", "body", "last_edited", "contributions": [{"author_id", "timestamp"?}]}`;
//! * the normalized corpus: one JSON post record per line, optionally preceded by a
//!   `{"format": "sln-corpus", ...}` header line.
//!
//! A post record carries `post_id`, `author_id`, `timestamp` (epoch seconds or an
//! RFC 3339 / `YYYY-MM-DD[ HH:MM:SS]` string, UTC), and optionally `body`,
//! `anonymous` (default false) and `role` (`learner` | `instructor`, default learner).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{IoContext, Result, SlnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Learner,
    Instructor,
}

impl std::str::FromStr for Role {
    type Err = SlnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "learner" | "student" => Ok(Role::Learner),
            "instructor" | "staff" | "ta" => Ok(Role::Instructor),
            other => Err(SlnError::InvalidArgument(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreadStructure {
    #[default]
    Mooc,
    Qa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub thread_id: String,
    pub author_id: String,
    pub timestamp: i64,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub anonymous: bool,
    #[serde(default, rename = "role")]
    pub author_role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_id: String,
    pub structure: ThreadStructure,
    pub posts: Vec<Post>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParseOutput {
    pub threads: Vec<Thread>,
    /// Records dropped because they had no timestamp.
    pub skipped_missing_timestamp: usize,
}

impl ParseOutput {
    pub fn post_count(&self) -> usize {
        self.threads.iter().map(|t| t.posts.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourseWindow {
    pub start: i64,
    pub end: i64,
}

impl CourseWindow {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end <= start {
            return Err(SlnError::InvalidArgument(format!("course window end {end} must follow start {start}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: i64) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

/// Author roles by id; overrides any role carried by the posts themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Roster(pub BTreeMap<String, Role>);

impl Roster {
    /// Reads `author_id,role` CSV with a header row.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            author_id: String,
            role: String,
        }
        let mut map = BTreeMap::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: Row = row?;
            map.insert(row.author_id, row.role.parse()?);
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path).at(path)?)
    }

    pub fn role_of(&self, post: &Post) -> Role {
        self.0.get(&post.author_id).copied().unwrap_or(post.author_role)
    }
}

/// The filtered, immutable corpus. Construct with [`filter_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForumCorpus {
    course_id: String,
    window: CourseWindow,
    threads: Vec<Thread>,
    learners: BTreeSet<String>,
}

impl ForumCorpus {
    pub fn course_id(&self) -> &str {
        &self.course_id
    }

    pub fn window(&self) -> CourseWindow {
        self.window
    }

    pub fn threads(&self) -> &[Thread] {
        &self.threads
    }

    pub fn learners(&self) -> &BTreeSet<String> {
        &self.learners
    }

    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        self.threads.iter().flat_map(|t| t.posts.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub threads: usize,
    pub posts: usize,
    pub learner_pairs: usize,
    pub duration_weeks: f64,
}

/// Epoch seconds from a JSON number or a date/time string (UTC when no offset is given).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then(|| v.floor() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp())
}

struct Walker<'a> {
    thread_id: &'a str,
}

impl Walker<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> SlnError {
        SlnError::Malformed {
            thread_id: self.thread_id.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn object<'v>(&self, v: &'v Value, field: &str) -> Result<&'v Map<String, Value>> {
        v.as_object().ok_or_else(|| self.err(field, "expected an object"))
    }

    fn id(&self, obj: &Map<String, Value>, field: &str) -> Result<String> {
        match obj.get(field) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(self.err(field, "expected a non-empty string id")),
            None => Err(self.err(field, "missing")),
        }
    }

    fn opt_string(&self, obj: &Map<String, Value>, field: &str) -> Result<String> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(String::new()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.err(field, "expected a string")),
        }
    }

    fn opt_bool(&self, obj: &Map<String, Value>, field: &str) -> Result<bool> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(false),
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(self.err(field, "expected a boolean")),
        }
    }

    fn opt_role(&self, obj: &Map<String, Value>, field: &str) -> Result<Role> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(Role::Learner),
            Some(Value::String(s)) => s.parse().map_err(|_| self.err(field, format!("unknown role `{s}`"))),
            Some(_) => Err(self.err(field, "expected a string")),
        }
    }

    /// `Ok(None)` when the timestamp is absent.
    fn timestamp(&self, obj: &Map<String, Value>, field: &str) -> Result<Option<i64>> {
        let t = match obj.get(field) {
            None | Some(Value::Null) => return Ok(None),
            Some(Value::Number(n)) => n
                .as_i64()
                .or_else(|| n.as_f64().map(|f| f.floor() as i64))
                .ok_or_else(|| self.err(field, "not representable as epoch seconds"))?,
            Some(Value::String(s)) => parse_timestamp(s).ok_or_else(|| self.err(field, format!("unparseable time `{s}`")))?,
            Some(_) => return Err(self.err(field, "expected a number or string")),
        };
        if t < 0 {
            return Err(self.err(field, "negative timestamp"));
        }
        Ok(Some(t))
    }

    fn array<'v>(&self, obj: &'v Map<String, Value>, field: &str) -> Result<&'v [Value]> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(&[]),
            Some(Value::Array(a)) => Ok(a),
            Some(_) => Err(self.err(field, "expected an array")),
        }
    }

    /// A standard post record; `None` when it has no timestamp.
    fn post(&self, v: &Value, context: &str) -> Result<Option<Post>> {
        let obj = self.object(v, context)?;
        let post_id = match obj.get("post_id") {
            Some(_) => self.id(obj, "post_id")?,
            None => self.id(obj, "comment_id")?,
        };
        let author_id = self.id(obj, "author_id")?;
        let Some(timestamp) = self.timestamp(obj, "timestamp")? else {
            return Ok(None);
        };
        Ok(Some(Post {
            post_id,
            thread_id: self.thread_id.to_string(),
            author_id,
            timestamp,
            body: self.opt_string(obj, "body")?,
            anonymous: self.opt_bool(obj, "anonymous")?,
            author_role: self.opt_role(obj, "role")?,
        }))
    }
}

fn sort_thread(posts: &mut [Post]) {
    posts.sort_by_key(|p| p.timestamp);
}

fn read_json(raw: &str) -> Result<Value> {
    serde_json::from_str(raw).map_err(|e| SlnError::Malformed {
        thread_id: "<document>".into(),
        field: "<root>".into(),
        message: e.to_string(),
    })
}

fn top_array<'v>(root: &'v Value, key: &str) -> Result<&'v [Value]> {
    match root {
        Value::Array(a) => Ok(a),
        Value::Object(obj) => match obj.get(key) {
            Some(Value::Array(a)) => Ok(a),
            _ => Err(SlnError::Malformed {
                thread_id: "<document>".into(),
                field: key.into(),
                message: "missing or not an array".into(),
            }),
        },
        _ => Err(SlnError::Malformed {
            thread_id: "<document>".into(),
            field: "<root>".into(),
            message: "expected an object or array".into(),
        }),
    }
}

fn thread_id_of(v: &Value, key: &str, index: usize) -> Result<String> {
    let fallback = format!("#{index}");
    let obj = Walker { thread_id: &fallback }.object(v, "thread")?;
    Walker { thread_id: &fallback }.id(obj, key)
}

/// Flattens posts and comments of each thread into time-ordered posts.
pub fn parse_mooc_export(raw: &str) -> Result<ParseOutput> {
    let root = read_json(raw)?;
    let mut out = ParseOutput::default();
    for (index, t) in top_array(&root, "threads")?.iter().enumerate() {
        let thread_id = thread_id_of(t, "thread_id", index)?;
        let w = Walker { thread_id: &thread_id };
        let obj = w.object(t, "thread")?;
        let mut posts = Vec::new();
        for p in w.array(obj, "posts")? {
            match w.post(p, "posts")? {
                Some(post) => posts.push(post),
                None => out.skipped_missing_timestamp += 1,
            }
            for c in w.array(w.object(p, "posts")?, "comments")? {
                match w.post(c, "comments")? {
                    Some(post) => posts.push(post),
                    None => out.skipped_missing_timestamp += 1,
                }
            }
        }
        sort_thread(&mut posts);
        out.threads.push(Thread {
            thread_id,
            structure: ThreadStructure::Mooc,
            posts,
        });
    }
    Ok(out)
}

/// Flattens question, answer contributions and follow-up discussion into posts.
///
/// Each contributor to a collaborative answer yields one post with id
/// `{answer_id}#{author_id}`, timed by that contributor's edit time or, when
/// absent, by the block's `last_edited`.
pub fn parse_qa_export(raw: &str) -> Result<ParseOutput> {
    let root = read_json(raw)?;
    let mut out = ParseOutput::default();
    for (index, q) in top_array(&root, "questions")?.iter().enumerate() {
        let thread_id = thread_id_of(q, "question_id", index)?;
        let w = Walker { thread_id: &thread_id };
        let obj = w.object(q, "question")?;
        let mut posts = Vec::new();
        let mut push = |post: Option<Post>, out: &mut ParseOutput| match post {
            Some(p) => posts.push(p),
            None => out.skipped_missing_timestamp += 1,
        };
        let question = obj.get("question").ok_or_else(|| w.err("question", "missing"))?;
        push(w.post(question, "question")?, &mut out);

        for a in w.array(obj, "answers")? {
            let answer = w.object(a, "answers")?;
            let answer_id = w.id(answer, "answer_id")?;
            let body = w.opt_string(answer, "body")?;
            let anonymous = w.opt_bool(answer, "anonymous")?;
            let last_edited = w.timestamp(answer, "last_edited")?;
            for c in w.array(answer, "contributions")? {
                let contrib = w.object(c, "contributions")?;
                let author_id = w.id(contrib, "author_id")?;
                let timestamp = w.timestamp(contrib, "timestamp")?.or(last_edited);
                let post = match timestamp {
                    Some(timestamp) => Some(Post {
                        post_id: format!("{answer_id}#{author_id}"),
                        thread_id: thread_id.clone(),
                        author_id,
                        timestamp,
                        body: body.clone(),
                        anonymous: anonymous || w.opt_bool(contrib, "anonymous")?,
                        author_role: w.opt_role(contrib, "role")?,
                    }),
                    None => None,
                };
                push(post, &mut out);
            }
        }

        for f in w.array(obj, "followups")? {
            push(w.post(f, "followups")?, &mut out);
            for r in w.array(w.object(f, "followups")?, "replies")? {
                push(w.post(r, "replies")?, &mut out);
            }
        }
        sort_thread(&mut posts);
        out.threads.push(Thread {
            thread_id,
            structure: ThreadStructure::Qa,
            posts,
        });
    }
    Ok(out)
}

/// Header line of a normalized corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub course_id: String,
    pub start_time: i64,
    pub end_time: i64,
}

pub const CORPUS_FORMAT: &str = "sln-corpus";

#[derive(Serialize, Deserialize)]
struct NormalizedRecord {
    post_id: String,
    thread_id: String,
    author_id: String,
    timestamp: Option<Value>,
    #[serde(default)]
    anonymous: bool,
    #[serde(default)]
    role: Role,
    #[serde(default)]
    body: String,
    #[serde(default)]
    structure: ThreadStructure,
}

/// Parses the line-delimited normalized format. Threads appear in order of first mention.
pub fn parse_normalized<R: BufRead>(reader: R) -> Result<(Option<CorpusHeader>, ParseOutput)> {
    let mut header = None;
    let mut out = ParseOutput::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SlnError::BadRecord {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| SlnError::BadRecord { line: n + 1, message };
        let value: Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if value.get("format").is_some() {
            let h: CorpusHeader = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            if h.format != CORPUS_FORMAT || h.version != 1 {
                return Err(bad(format!("unsupported corpus format {} v{}", h.format, h.version)));
            }
            header = Some(h);
            continue;
        }
        let rec: NormalizedRecord = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        let timestamp = match &rec.timestamp {
            None | Some(Value::Null) => {
                out.skipped_missing_timestamp += 1;
                continue;
            }
            Some(Value::Number(v)) => v.as_i64().or_else(|| v.as_f64().map(|f| f.floor() as i64)),
            Some(Value::String(s)) => parse_timestamp(s),
            Some(_) => None,
        }
        .filter(|t| *t >= 0)
        .ok_or_else(|| bad("timestamp must be non-negative epoch seconds or a date string".into()))?;
        let slot = *index.entry(rec.thread_id.clone()).or_insert_with(|| {
            out.threads.push(Thread {
                thread_id: rec.thread_id.clone(),
                structure: rec.structure,
                posts: Vec::new(),
            });
            out.threads.len() - 1
        });
        out.threads[slot].posts.push(Post {
            post_id: rec.post_id,
            thread_id: rec.thread_id,
            author_id: rec.author_id,
            timestamp,
            body: rec.body,
            anonymous: rec.anonymous,
            author_role: rec.role,
        });
    }
    for t in &mut out.threads {
        sort_thread(&mut t.posts);
    }
    Ok((header, out))
}

pub fn write_threads<W: Write>(mut writer: W, header: Option<&CorpusHeader>, threads: &[Thread]) -> std::io::Result<()> {
    if let Some(h) = header {
        serde_json::to_writer(&mut writer, h)?;
        writeln!(writer)?;
    }
    for t in threads {
        for p in &t.posts {
            let rec = NormalizedRecord {
                post_id: p.post_id.clone(),
                thread_id: p.thread_id.clone(),
                author_id: p.author_id.clone(),
                timestamp: Some(Value::from(p.timestamp)),
                anonymous: p.anonymous,
                role: p.author_role,
                body: p.body.clone(),
                structure: t.structure,
            };
            serde_json::to_writer(&mut writer, &rec)?;
            writeln!(writer)?;
        }
    }
    writer.flush()
}

impl ForumCorpus {
    pub fn header(&self) -> CorpusHeader {
        CorpusHeader {
            format: CORPUS_FORMAT.into(),
            version: 1,
            course_id: self.course_id.clone(),
            start_time: self.window.start,
            end_time: self.window.end,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).at(path)?;
        write_threads(std::io::BufWriter::new(file), Some(&self.header()), &self.threads).at(path)
    }

    /// Loads a saved corpus; the file must carry a header and already satisfy the filter rules.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).at(path)?;
        let (header, parsed) = parse_normalized(std::io::BufReader::new(file))?;
        let header = header.ok_or_else(|| SlnError::Format(format!("{}: corpus file has no header line", path.display())))?;
        let window = CourseWindow::new(header.start_time, header.end_time)?;
        let corpus = filter_corpus(parsed.threads.clone(), &header.course_id, window, &Roster::default())?;
        if corpus.posts().count() != parsed.post_count() {
            return Err(SlnError::Format(format!("{}: corpus file contains filtered-out posts", path.display())));
        }
        Ok(corpus)
    }
}

/// Drops instructor, anonymous and out-of-window posts; keeps learners with at least one post.
///
/// Learner posts that address an instructor are retained; only the instructor's own posts go.
pub fn filter_corpus(threads: Vec<Thread>, course_id: &str, window: CourseWindow, roster: &Roster) -> Result<ForumCorpus> {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut learners = BTreeSet::new();
    for mut thread in threads {
        thread.posts.retain(|p| !p.anonymous && roster.role_of(p) == Role::Learner && window.contains(p.timestamp));
        for p in &mut thread.posts {
            if !seen.insert(p.post_id.clone()) {
                return Err(SlnError::DuplicatePost(p.post_id.clone()));
            }
            p.author_role = Role::Learner;
            learners.insert(p.author_id.clone());
        }
        if !thread.posts.is_empty() {
            sort_thread(&mut thread.posts);
            kept.push(thread);
        }
    }
    if kept.is_empty() {
        return Err(SlnError::EmptyCorpus);
    }
    Ok(ForumCorpus {
        course_id: course_id.to_string(),
        window,
        threads: kept,
        learners,
    })
}

pub fn corpus_stats(corpus: &ForumCorpus) -> CorpusStats {
    let users = corpus.learners.len();
    CorpusStats {
        users,
        threads: corpus.threads.len(),
        posts: corpus.posts().count(),
        learner_pairs: users * users.saturating_sub(1) / 2,
        duration_weeks: (corpus.window.end - corpus.window.start) as f64 / (7.0 * 86_400.0),
    }
}

#include "masred/engagement.hpp"

#include "masred/digest.hpp"
#include "masred/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>
#include <regex>
#include <sstream>

#ifndef MASRED_DATA_DIR
#define MASRED_DATA_DIR "data"
#endif

namespace masred {

using json = nlohmann::json;

namespace {

constexpr std::string_view kChecklistFormat = "masred-checklist/1";
constexpr std::string_view kMitigationsFormat = "masred-mitigations/1";
constexpr std::string_view kCveFormat = "masred-cve-reference/1";
constexpr std::string_view kPlanFormat = "masred-engagement/1";
constexpr std::string_view kReportFormat = "masred-report/1";

constexpr std::array<std::pair<Stage, std::string_view>, 6> kStageNames{{
    {Stage::a1, "A1"}, {Stage::a2, "A2"}, {Stage::a3, "A3"}, {Stage::a3s, "A3S"}, {Stage::a4, "A4"}, {Stage::a5, "A5"},
}};

[[noreturn]] void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

json parse_json(const std::string& text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string(what) + ": " + e.what());
  }
}

void expect_format(const json& j, std::string_view format, std::string_view what) {
  if (!j.is_object() || j.value("format", std::string()) != format)
    fail(ErrorKind::format, std::string(what) + ": expected format \"" + std::string(format) + "\"");
}

bool is_sha256(std::string_view s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

}  // namespace

std::string_view to_string(Stage stage) {
  for (const auto& [s, name] : kStageNames)
    if (s == stage) return name;
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (const auto& [s, name] : kStageNames)
    if (name == text) return s;
  fail(ErrorKind::format, "unknown checklist stage \"" + std::string(text) + "\"");
}

std::size_t ChecklistCatalog::count(Stage stage) const {
  return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [&](const CatalogItem& i) { return i.stage == stage; }));
}

const Principle* Catalogs::principle(std::string_view id) const {
  for (const auto& p : principles)
    if (p.id == id) return &p;
  return nullptr;
}

ChecklistCatalog parse_checklist_catalog(const std::string& text) {
  const json j = parse_json(text, "checklist catalog");
  expect_format(j, kChecklistFormat, "checklist catalog");
  ChecklistCatalog catalog;
  catalog.digest = sha256_hex(text);
  try {
    catalog.version = j.at("version").get<std::string>();
    for (const auto& s : j.at("stages")) catalog.stage_titles.emplace_back(parse_stage(s.at("id").get<std::string>()), s.at("title").get<std::string>());
    for (const auto& i : j.at("items")) {
      CatalogItem item;
      item.id = i.at("id").get<std::string>();
      item.stage = parse_stage(i.at("stage").get<std::string>());
      item.group = i.value("group", std::string());
      item.text = i.at("text").get<std::string>();
      if (item.id.empty() || item.text.empty()) fail(ErrorKind::format, "checklist catalog: empty item id or text");
      if (item.id.rfind(std::string(to_string(item.stage)) + ".", 0) != 0)
        fail(ErrorKind::format, "checklist catalog: item " + item.id + " is not scoped to its stage");
      catalog.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("checklist catalog: ") + e.what());
  }
  for (std::size_t a = 0; a < catalog.items.size(); ++a)
    for (std::size_t b = a + 1; b < catalog.items.size(); ++b)
      if (catalog.items[a].id == catalog.items[b].id) fail(ErrorKind::format, "checklist catalog: duplicate id " + catalog.items[a].id);
  return catalog;
}

std::filesystem::path default_data_dir() { return MASRED_DATA_DIR; }

Catalogs load_catalogs(const std::filesystem::path& data_dir) {
  Catalogs c;
  c.checklist = parse_checklist_catalog(read_text_file(data_dir / "catalog" / "red-ai-checklist.json"));
  try {
    const json m = parse_json(read_text_file(data_dir / "catalog" / "ncsc-principles.json"), "mitigation catalog");
    expect_format(m, kMitigationsFormat, "mitigation catalog");
    for (const auto& p : m.at("principles")) c.principles.push_back({p.at("id").get<std::string>(), p.at("label").get<std::string>()});
    const json v = parse_json(read_text_file(data_dir / "catalog" / "cve-reference.json"), "CVE reference");
    expect_format(v, kCveFormat, "CVE reference");
    for (const auto& e : v.at("entries"))
      c.cves.push_back({e.at("package").get<std::string>(), e.at("cve").get<std::string>(), e.at("summary").get<std::string>(),
                        e.at("severity").get<std::string>()});
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("catalog: ") + e.what());
  }
  c.report_schema = read_text_file(data_dir / "schema" / "report.schema.json");
  parse_json(c.report_schema, "report schema");
  return c;
}

// ---- enums -------------------------------------------------------------------

std::string_view to_string(AccessLevel level) { return level == AccessLevel::open_box ? "open-box" : "closed-box"; }

AccessLevel parse_access_level(std::string_view text) {
  if (text == "open-box") return AccessLevel::open_box;
  if (text == "closed-box") return AccessLevel::closed_box;
  fail(ErrorKind::invalid_argument, "access level must be open-box or closed-box, got \"" + std::string(text) + "\"");
}

std::string_view to_string(ItemStatus status) {
  switch (status) {
    case ItemStatus::open: return "open";
    case ItemStatus::done: return "done";
    case ItemStatus::not_applicable: return "not_applicable";
    case ItemStatus::blocked: return "blocked";
  }
  return "?";
}

ItemStatus parse_item_status(std::string_view text) {
  for (ItemStatus s : {ItemStatus::open, ItemStatus::done, ItemStatus::not_applicable, ItemStatus::blocked})
    if (to_string(s) == text) return s;
  fail(ErrorKind::invalid_argument, "unknown item status \"" + std::string(text) + "\"");
}

std::string_view to_string(Level level) {
  switch (level) {
    case Level::low: return "low";
    case Level::medium: return "medium";
    case Level::high: return "high";
  }
  return "?";
}

std::string_view to_string(Risk risk) {
  switch (risk) {
    case Risk::low: return "low";
    case Risk::medium: return "medium";
    case Risk::high: return "high";
    case Risk::critical: return "critical";
  }
  return "?";
}

Level parse_level(std::string_view text) {
  for (Level l : {Level::low, Level::medium, Level::high})
    if (to_string(l) == text) return l;
  fail(ErrorKind::invalid_argument, "level must be low, medium or high, got \"" + std::string(text) + "\"");
}

Risk risk_matrix(Level likelihood, Level impact) {
  static constexpr Risk table[3][3] = {
      {Risk::low, Risk::low, Risk::medium},
      {Risk::low, Risk::medium, Risk::high},
      {Risk::medium, Risk::high, Risk::critical},
  };
  return table[static_cast<int>(likelihood)][static_cast<int>(impact)];
}

// ---- plan --------------------------------------------------------------------

void validate_scope(const ScopeRecord& scope) {
  if (scope.objectives.empty()) fail(ErrorKind::invalid_argument, "scope: objectives must not be empty");
  if (scope.disclosure_process.empty())
    fail(ErrorKind::invalid_argument,
         "scope: a vulnerability disclosure process must be agreed with the owner before the evaluation starts");
}

EngagementPlan new_engagement(const ScopeRecord& scope, const ChecklistCatalog& catalog, std::string id) {
  validate_scope(scope);
  if (id.empty()) fail(ErrorKind::invalid_argument, "engagement id must not be empty");
  EngagementPlan plan;
  plan.id = std::move(id);
  plan.scope = scope;
  plan.catalog_version = catalog.version;
  plan.catalog_digest = catalog.digest;
  for (const auto& item : catalog.items) plan.checklist.push_back({item.id, item.stage, item.text, ItemStatus::open, {}, {}});
  return plan;
}

EngagementPlan new_engagement(const ScopeRecord& scope, const ChecklistCatalog& catalog) {
  std::random_device device;
  const std::uint64_t value = (std::uint64_t{device()} << 32) ^ device();
  char buf[24];
  std::snprintf(buf, sizeof buf, "eng-%016llx", static_cast<unsigned long long>(value));
  return new_engagement(scope, catalog, buf);
}

namespace {

ChecklistItem* find_item(EngagementPlan& plan, std::string_view id) {
  for (auto& item : plan.checklist)
    if (item.id == id) return &item;
  return nullptr;
}

}  // namespace

void set_status(EngagementPlan& plan, std::string_view item_id, ItemStatus status, std::string reason) {
  ChecklistItem* item = find_item(plan, item_id);
  if (!item) fail(ErrorKind::invalid_argument, "unknown checklist item \"" + std::string(item_id) + "\"");
  const bool needs_reason = status == ItemStatus::not_applicable || status == ItemStatus::blocked;
  if (needs_reason && reason.empty())
    fail(ErrorKind::invalid_argument, "status " + std::string(to_string(status)) + " requires a reason");
  item->status = status;
  item->reason = needs_reason ? std::move(reason) : std::string();
}

void record_finding(EngagementPlan& plan, Finding finding, const std::vector<std::string>& linked_items,
                    const Catalogs& catalogs) {
  if (finding.id.empty()) fail(ErrorKind::invalid_argument, "finding id must not be empty");
  if (finding.title.empty()) fail(ErrorKind::invalid_argument, "finding " + finding.id + ": title must not be empty");
  if (std::any_of(plan.findings.begin(), plan.findings.end(), [&](const Finding& f) { return f.id == finding.id; }))
    fail(ErrorKind::invalid_argument, "duplicate finding id " + finding.id);
  if (!finding.likelihood) fail(ErrorKind::invalid_argument, "finding " + finding.id + ": likelihood is required");
  if (!finding.impact) fail(ErrorKind::invalid_argument, "finding " + finding.id + ": impact is required");
  for (const auto& id : linked_items)
    if (!find_item(plan, id)) fail(ErrorKind::invalid_argument, "finding " + finding.id + ": unknown checklist item \"" + id + "\"");
  for (const auto& id : finding.mitigations)
    if (!catalogs.principle(id)) fail(ErrorKind::invalid_argument, "finding " + finding.id + ": unknown principle \"" + id + "\"");
  for (const auto& a : finding.artifacts)
    if (!is_sha256(a.sha256)) fail(ErrorKind::invalid_argument, "finding " + finding.id + ": artifact digest must be 64 lower-case hex digits");
  const json results = parse_json(finding.results.empty() ? "{}" : finding.results, "finding results");
  if (!results.is_object()) fail(ErrorKind::invalid_argument, "finding " + finding.id + ": results must be a JSON object");

  finding.results = results.dump();
  finding.risk = risk_matrix(*finding.likelihood, *finding.impact);
  finding.items.clear();
  for (const auto& id : linked_items)
    if (std::find(finding.items.begin(), finding.items.end(), id) == finding.items.end()) finding.items.push_back(id);
  for (const auto& id : finding.items) find_item(plan, id)->findings.push_back(finding.id);
  plan.findings.push_back(std::move(finding));
}

bool scope_stage_complete(const EngagementPlan& plan) {
  return std::all_of(plan.checklist.begin(), plan.checklist.end(), [](const ChecklistItem& i) {
    return i.stage != Stage::a1 || i.status == ItemStatus::done || i.status == ItemStatus::not_applicable;
  });
}

namespace {

json scope_json(const ScopeRecord& s) {
  return {{"objectives", s.objectives},
          {"rules_of_engagement", s.rules_of_engagement},
          {"access_level", to_string(s.access_level)},
          {"schedule", {{"start", s.schedule_start}, {"end", s.schedule_end}}},
          {"contacts", s.contacts},
          {"disclosure_process", s.disclosure_process}};
}

ScopeRecord scope_from(const json& j) {
  ScopeRecord s;
  s.objectives = j.value("objectives", std::string());
  s.rules_of_engagement = j.value("rules_of_engagement", std::string());
  s.access_level = parse_access_level(j.value("access_level", std::string("closed-box")));
  if (j.contains("schedule")) {
    s.schedule_start = j["schedule"].value("start", std::string());
    s.schedule_end = j["schedule"].value("end", std::string());
  }
  s.contacts = j.value("contacts", std::vector<std::string>{});
  s.disclosure_process = j.value("disclosure_process", std::string());
  return s;
}

json item_json(const ChecklistItem& i) {
  json j = {{"id", i.id}, {"stage", to_string(i.stage)}, {"text", i.text}, {"status", to_string(i.status)}, {"findings", i.findings}};
  if (!i.reason.empty()) j["reason"] = i.reason;
  return j;
}

json finding_json(const Finding& f) {
  json artifacts = json::array();
  for (const auto& a : f.artifacts) artifacts.push_back({{"label", a.label}, {"sha256", a.sha256}});
  return {{"id", f.id},
          {"title", f.title},
          {"component", f.component},
          {"attack_kind", f.attack_kind},
          {"likelihood", to_string(*f.likelihood)},
          {"impact", to_string(*f.impact)},
          {"risk", to_string(f.risk)},
          {"evidence", {{"artifacts", artifacts}, {"results", json::parse(f.results)}}},
          {"mitigations", f.mitigations},
          {"items", f.items}};
}

}  // namespace

std::string plan_to_json(const EngagementPlan& plan) {
  json j;
  j["format"] = kPlanFormat;
  j["id"] = plan.id;
  j["catalog"] = {{"version", plan.catalog_version}, {"digest", plan.catalog_digest}};
  j["scope"] = scope_json(plan.scope);
  j["checklist"] = json::array();
  for (const auto& i : plan.checklist) j["checklist"].push_back(item_json(i));
  j["findings"] = json::array();
  for (const auto& f : plan.findings) j["findings"].push_back(finding_json(f));
  return j.dump(2) + "\n";
}

EngagementPlan engagement_from_json(const std::string& text) {
  const json j = parse_json(text, "engagement plan");
  expect_format(j, kPlanFormat, "engagement plan");
  EngagementPlan plan;
  try {
    plan.id = j.at("id").get<std::string>();
    plan.catalog_version = j.at("catalog").at("version").get<std::string>();
    plan.catalog_digest = j.at("catalog").at("digest").get<std::string>();
    plan.scope = scope_from(j.at("scope"));
    for (const auto& i : j.at("checklist")) {
      ChecklistItem item;
      item.id = i.at("id").get<std::string>();
      item.stage = parse_stage(i.at("stage").get<std::string>());
      item.text = i.at("text").get<std::string>();
      item.status = parse_item_status(i.at("status").get<std::string>());
      item.reason = i.value("reason", std::string());
      item.findings = i.value("findings", std::vector<std::string>{});
      plan.checklist.push_back(std::move(item));
    }
    for (const auto& f : j.at("findings")) {
      Finding finding;
      finding.id = f.at("id").get<std::string>();
      finding.title = f.at("title").get<std::string>();
      finding.component = f.value("component", std::string());
      finding.attack_kind = f.value("attack_kind", std::string());
      finding.likelihood = parse_level(f.at("likelihood").get<std::string>());
      finding.impact = parse_level(f.at("impact").get<std::string>());
      finding.risk = risk_matrix(*finding.likelihood, *finding.impact);
      for (const auto& a : f.at("evidence").at("artifacts"))
        finding.artifacts.push_back({a.at("label").get<std::string>(), a.at("sha256").get<std::string>()});
      finding.results = f.at("evidence").value("results", json::object()).dump();
      finding.mitigations = f.value("mitigations", std::vector<std::string>{});
      finding.items = f.value("items", std::vector<std::string>{});
      plan.findings.push_back(std::move(finding));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("engagement plan: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("engagement plan: ") + e.what());
  }
  validate_scope(plan.scope);
  return plan;
}

// ---- report ------------------------------------------------------------------

ReportFormat parse_report_format(std::string_view text) {
  if (text == "markdown" || text == "md") return ReportFormat::markdown;
  if (text == "json" || text == "canonical") return ReportFormat::canonical;
  fail(ErrorKind::invalid_argument, "unknown report format \"" + std::string(text) + "\" (markdown or json)");
}

std::vector<const Finding*> findings_by_risk(const EngagementPlan& plan) {
  std::vector<const Finding*> out;
  for (const auto& f : plan.findings) out.push_back(&f);
  std::sort(out.begin(), out.end(), [](const Finding* a, const Finding* b) {
    if (a->risk != b->risk) return a->risk > b->risk;
    return a->id < b->id;
  });
  return out;
}

namespace {

std::string cell(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == '|') out += "\\|";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out;
}

std::string stage_title(const Catalogs& catalogs, Stage stage) {
  for (const auto& [s, title] : catalogs.checklist.stage_titles)
    if (s == stage) return title;
  return std::string(to_string(stage));
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(sep) : std::string()) + parts[i];
  return out;
}

std::string render_markdown(const EngagementPlan& plan, const Catalogs& catalogs) {
  std::ostringstream md;
  const auto& s = plan.scope;
  md << "# Red-team engagement report\n\n";
  md << "- Engagement: `" << plan.id << "`\n";
  md << "- Checklist catalog: version " << plan.catalog_version << ", sha256 `" << plan.catalog_digest << "`\n\n";

  md << "## Scope\n\n";
  md << "- Objectives: " << cell(s.objectives) << "\n";
  md << "- Rules of engagement: " << cell(s.rules_of_engagement) << "\n";
  md << "- Access level: " << to_string(s.access_level) << "\n";
  md << "- Schedule: " << cell(s.schedule_start) << " to " << cell(s.schedule_end) << "\n";
  md << "- Contacts: " << cell(join(s.contacts, "; ")) << "\n";
  md << "- Disclosure process: " << cell(s.disclosure_process) << "\n\n";

  md << "## Checklist\n";
  for (const auto& [stage, title] : kStageNames) {
    (void)title;
    bool header = false;
    for (const auto& i : plan.checklist) {
      if (i.stage != stage) continue;
      if (!header) {
        md << "\n### " << to_string(stage) << " " << stage_title(catalogs, stage) << "\n\n";
        md << "| Item | Status | Description | Findings |\n|---|---|---|---|\n";
        header = true;
      }
      std::string status(to_string(i.status));
      if (!i.reason.empty()) status += " (" + cell(i.reason) + ")";
      md << "| " << i.id << " | " << status << " | " << cell(i.text) << " | " << join(i.findings, ", ") << " |\n";
    }
  }

  const auto ordered = findings_by_risk(plan);
  md << "\n## Findings\n\n";
  if (ordered.empty()) md << "No findings recorded.\n";
  for (const Finding* f : ordered) {
    md << "### " << f->id << ": " << cell(f->title) << "\n\n";
    md << "- Risk: " << to_string(f->risk) << " (likelihood " << to_string(*f->likelihood) << ", impact "
       << to_string(*f->impact) << ")\n";
    md << "- Component: " << cell(f->component) << "\n";
    md << "- Attack kind: " << cell(f->attack_kind) << "\n";
    md << "- Evidence:\n";
    if (f->artifacts.empty()) md << "  - no artifacts\n";
    for (const auto& a : f->artifacts) md << "  - `" << a.sha256 << "` " << cell(a.label) << "\n";
    md << "- Results: `" << f->results << "`\n\n";
  }

  md << "## Mitigations\n\n";
  bool any_mitigation = false;
  for (const Finding* f : ordered) {
    if (f->mitigations.empty()) continue;
    any_mitigation = true;
    std::vector<std::string> labels;
    for (const auto& id : f->mitigations) labels.push_back(id + " (" + catalogs.principle(id)->label + ")");
    md << "- " << f->id << ": " << join(labels, "; ") << "\n";
  }
  if (!any_mitigation) md << "No mitigations mapped.\n";

  md << "\n## Areas not fully evaluated\n\n";
  bool any_blocked = false;
  for (const auto& i : plan.checklist) {
    if (i.status != ItemStatus::blocked) continue;
    any_blocked = true;
    md << "- " << cell(i.text) << ". Blocked: " << cell(i.reason) << "\n";
  }
  if (!any_blocked) md << "None.\n";

  md << "\n## Reference: known vulnerabilities in common ML tooling\n\n";
  md << "| Package | CVE | Summary | Severity |\n|---|---|---|---|\n";
  for (const auto& c : catalogs.cves)
    md << "| " << cell(c.package) << " | " << cell(c.cve) << " | " << cell(c.summary) << " | " << cell(c.severity) << " |\n";
  return md.str();
}

std::string render_canonical(const EngagementPlan& plan, const Catalogs& catalogs) {
  json j;
  j["format"] = kReportFormat;
  j["engagement"] = {{"id", plan.id}, {"catalog_version", plan.catalog_version}, {"catalog_digest", plan.catalog_digest}};
  j["scope"] = scope_json(plan.scope);
  j["checklist"] = json::array();
  for (const auto& i : plan.checklist) j["checklist"].push_back(item_json(i));
  j["findings"] = json::array();
  j["mitigations"] = json::array();
  for (const Finding* f : findings_by_risk(plan)) {
    j["findings"].push_back(finding_json(*f));
    json principles = json::array();
    for (const auto& id : f->mitigations) principles.push_back({{"id", id}, {"label", catalogs.principle(id)->label}});
    j["mitigations"].push_back({{"finding", f->id}, {"principles", principles}});
  }
  j["not_fully_evaluated"] = json::array();
  for (const auto& i : plan.checklist)
    if (i.status == ItemStatus::blocked) j["not_fully_evaluated"].push_back({{"id", i.id}, {"text", i.text}, {"reason", i.reason}});
  j["references"]["cves"] = json::array();
  for (const auto& c : catalogs.cves)
    j["references"]["cves"].push_back({{"package", c.package}, {"cve", c.cve}, {"summary", c.summary}, {"severity", c.severity}});
  std::string text = j.dump(2) + "\n";
  if (auto problems = validate_json(text, catalogs.report_schema); !problems.empty())
    fail(ErrorKind::format, "report does not match its schema: " + problems.front());
  return text;
}

}  // namespace

std::string render_report(const EngagementPlan& plan, ReportFormat format, const Catalogs& catalogs) {
  if (!scope_stage_complete(plan)) {
    std::vector<std::string> pending;
    for (const auto& i : plan.checklist)
      if (i.stage == Stage::a1 && i.status != ItemStatus::done && i.status != ItemStatus::not_applicable) pending.push_back(i.id);
    fail(ErrorKind::state, "report requires every A1 item done or not_applicable; pending: " + join(pending, ", "));
  }
  for (const auto& f : plan.findings)
    for (const auto& id : f.mitigations)
      if (!catalogs.principle(id)) fail(ErrorKind::invalid_argument, "finding " + f.id + ": unknown principle \"" + id + "\"");
  return format == ReportFormat::markdown ? render_markdown(plan, catalogs) : render_canonical(plan, catalogs);
}

// ---- schema subset -------------------------------------------------------------

namespace {

bool has_type(const json& value, std::string_view type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "integer") return value.is_number_integer();
  if (type == "number") return value.is_number();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  return false;
}

void check(const json& value, const json& schema, const std::string& pointer, std::vector<std::string>& out) {
  if (!schema.is_object()) return;
  if (auto t = schema.find("type"); t != schema.end()) {
    bool ok = false;
    if (t->is_string()) ok = has_type(value, t->get<std::string>());
    else if (t->is_array())
      for (const auto& alt : *t) ok = ok || has_type(value, alt.get<std::string>());
    if (!ok) {
      out.push_back(pointer + ": expected type " + t->dump());
      return;
    }
  }
  if (auto e = schema.find("enum"); e != schema.end() && std::find(e->begin(), e->end(), value) == e->end())
    out.push_back(pointer + ": value " + value.dump() + " not in enum");
  if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    if (auto m = schema.find("minLength"); m != schema.end() && s.size() < m->get<std::size_t>())
      out.push_back(pointer + ": string shorter than " + m->dump());
    if (auto p = schema.find("pattern"); p != schema.end() && !std::regex_search(s, std::regex(p->get<std::string>())))
      out.push_back(pointer + ": string does not match " + p->dump());
  }
  if (value.is_array()) {
    if (auto m = schema.find("minItems"); m != schema.end() && value.size() < m->get<std::size_t>())
      out.push_back(pointer + ": fewer than " + m->dump() + " items");
    if (auto items = schema.find("items"); items != schema.end())
      for (std::size_t i = 0; i < value.size(); ++i) check(value[i], *items, pointer + "/" + std::to_string(i), out);
  }
  if (value.is_object()) {
    if (auto r = schema.find("required"); r != schema.end())
      for (const auto& key : *r)
        if (!value.contains(key.get<std::string>())) out.push_back(pointer + ": missing required member \"" + key.get<std::string>() + "\"");
    const auto props = schema.find("properties");
    for (const auto& [key, member] : value.items()) {
      if (props != schema.end() && props->contains(key)) {
        check(member, (*props)[key], pointer + "/" + key, out);
      } else if (auto a = schema.find("additionalProperties"); a != schema.end() && a->is_boolean() && !a->get<bool>()) {
        out.push_back(pointer + ": unexpected member \"" + key + "\"");
      }
    }
  }
}

}  // namespace

std::vector<std::string> validate_json(const std::string& document, const std::string& schema) {
  const json doc = parse_json(document, "document");
  const json sch = parse_json(schema, "schema");
  std::vector<std::string> out;
  check(doc, sch, "", out);
  return out;
}

}  // namespace masred

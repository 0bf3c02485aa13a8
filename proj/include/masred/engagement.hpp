#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace masred {

// ---- catalogs ----------------------------------------------------------------

enum class Stage { a1, a2, a3, a3s, a4, a5 };
std::string_view to_string(Stage stage);  // A1, A2, A3, A3S, A4, A5
Stage parse_stage(std::string_view text);

struct CatalogItem {
  std::string id;     // stage-scoped, e.g. A3.11-evasion
  Stage stage = Stage::a1;
  std::string group;  // optional sub-grouping inside a stage
  std::string text;
};

struct ChecklistCatalog {
  std::string version;
  std::string digest;  // sha256 of the catalog file bytes
  std::vector<std::pair<Stage, std::string>> stage_titles;
  std::vector<CatalogItem> items;

  std::size_t count(Stage stage) const;
};

struct Principle {
  std::string id;
  std::string label;
};

struct CveEntry {
  std::string package;
  std::string cve;
  std::string summary;
  std::string severity;
};

// Everything the engine reads from disk, loaded once.
struct Catalogs {
  ChecklistCatalog checklist;
  std::vector<Principle> principles;
  std::vector<CveEntry> cves;
  std::string report_schema;  // JSON text

  const Principle* principle(std::string_view id) const;
};

ChecklistCatalog parse_checklist_catalog(const std::string& text);
// Loads red-ai-checklist.json, ncsc-principles.json, cve-reference.json
// and report.schema.json from `data_dir`/catalog and `data_dir`/schema.
Catalogs load_catalogs(const std::filesystem::path& data_dir);
// Directory shipped with the source tree.
std::filesystem::path default_data_dir();

// ---- plan --------------------------------------------------------------------

enum class AccessLevel { open_box, closed_box };
std::string_view to_string(AccessLevel level);  // open-box, closed-box
AccessLevel parse_access_level(std::string_view text);

struct ScopeRecord {
  std::string objectives;
  std::string rules_of_engagement;
  AccessLevel access_level = AccessLevel::closed_box;
  std::string schedule_start;  // free-form dates, copied verbatim into reports
  std::string schedule_end;
  std::vector<std::string> contacts;
  std::string disclosure_process;
};

enum class ItemStatus { open, done, not_applicable, blocked };
std::string_view to_string(ItemStatus status);
ItemStatus parse_item_status(std::string_view text);

struct ChecklistItem {
  std::string id;
  Stage stage = Stage::a1;
  std::string text;
  ItemStatus status = ItemStatus::open;
  std::string reason;                 // required for not_applicable and blocked
  std::vector<std::string> findings;  // linked finding ids, in link order
};

enum class Level { low, medium, high };
enum class Risk { low, medium, high, critical };
std::string_view to_string(Level level);
std::string_view to_string(Risk risk);
Level parse_level(std::string_view text);

// Fixed 3x3 matrix: LL, LM, ML -> low; MM, LH, HL -> medium; MH, HM -> high;
// HH -> critical.
Risk risk_matrix(Level likelihood, Level impact);

struct ArtifactRef {
  std::string label;   // e.g. a file name
  std::string sha256;  // lower-case hex
};

struct Finding {
  std::string id;
  std::string title;
  std::string component;
  std::string attack_kind;
  std::vector<ArtifactRef> artifacts;
  std::string results = "{}";  // JSON object with result values, stored canonically
  std::optional<Level> likelihood;
  std::optional<Level> impact;
  Risk risk = Risk::low;                // derived on record
  std::vector<std::string> mitigations;  // principle ids
  std::vector<std::string> items;        // linked checklist ids
};

struct EngagementPlan {
  std::string id;
  ScopeRecord scope;
  std::string catalog_version;
  std::string catalog_digest;
  std::vector<ChecklistItem> checklist;
  std::vector<Finding> findings;  // in record order
};

// Throws invalid_argument naming the first missing mandatory field.
void validate_scope(const ScopeRecord& scope);

// Full catalog, every item open. The id must be non-empty.
EngagementPlan new_engagement(const ScopeRecord& scope, const ChecklistCatalog& catalog, std::string id);
// Same with a fresh random id ("eng-" + 16 hex digits).
EngagementPlan new_engagement(const ScopeRecord& scope, const ChecklistCatalog& catalog);

void set_status(EngagementPlan& plan, std::string_view item_id, ItemStatus status, std::string reason = {});

// Derives the risk, stores the finding and links it from `linked_items`
// (which replace finding.items). Unknown item or principle ids, a missing
// likelihood or impact, a duplicate finding id or a malformed results
// object are errors; the plan is unchanged on error.
void record_finding(EngagementPlan& plan, Finding finding, const std::vector<std::string>& linked_items,
                    const Catalogs& catalogs);

bool scope_stage_complete(const EngagementPlan& plan);

std::string plan_to_json(const EngagementPlan& plan);
EngagementPlan engagement_from_json(const std::string& text);

// ---- report ------------------------------------------------------------------

enum class ReportFormat { markdown, canonical };
ReportFormat parse_report_format(std::string_view text);  // markdown | json

// Requires every A1 item done or not_applicable (ErrorKind::state).
// Output depends on the plan and catalogs only.
std::string render_report(const EngagementPlan& plan, ReportFormat format, const Catalogs& catalogs);

// Findings ordered by risk, highest first, then by id.
std::vector<const Finding*> findings_by_risk(const EngagementPlan& plan);

// Validates JSON text against a JSON Schema subset: type, enum, required,
// properties, additionalProperties (boolean), items, minItems, minLength,
// pattern. Returns one message per violation, each prefixed by its JSON
// pointer; empty when valid. Unparseable text is a format error.
std::vector<std::string> validate_json(const std::string& document, const std::string& schema);

}  // namespace masred

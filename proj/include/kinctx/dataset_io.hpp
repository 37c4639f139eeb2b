#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kinctx/entity_linker.hpp"
#include "kinctx/knowledge_store.hpp"
#include "kinctx/pretrain_builder.hpp"

namespace kinctx {

/// Reads a JSONL dataset. Classification rows carry "text", optional
/// "text_pair" and "label"; QA rows carry "question", optional "context" and
/// "choices", and "answer". An optional "id" names the row (default: its
/// line number) and an optional "entities" array of KB ids pre-links it,
/// which needs `kb`. Numeric labels are kept as their JSON text.
std::vector<LinkedExample> read_dataset(std::istream& in, std::string_view source,
                                        const KnowledgeBase* kb = nullptr);
std::vector<LinkedExample> read_dataset_file(const std::filesystem::path& path,
                                             const KnowledgeBase* kb = nullptr);

/// One document per non-empty line, as a single "text" field.
std::vector<LinkedExample> read_documents(std::istream& in);
std::vector<LinkedExample> read_documents_file(const std::filesystem::path& path);

/// Links every example; a pre-linked entity list survives when the text
/// yields no mentions.
void link_dataset(std::span<LinkedExample> examples, const LinkerIndex& index);

/// Sorted distinct word tokens of every field, for random replacements.
std::vector<std::string> word_vocabulary(std::span<const LinkedExample> examples);

/// {"id", "mentions": [{"field", "start", "end", "surface", "entity",
/// "ambiguous"}], "entities": [...]} per line.
void write_mentions(std::ostream& out, std::span<const LinkedExample> examples,
                    const KnowledgeBase& kb);

/// {"instance", "task", "tokens", "mask", "targets"} per packed example.
void write_pretrain(std::ostream& out, std::span<const PretrainInstance> instances);

/// Non-empty lines of a text file, or the "prompt" field of JSONL rows, or
/// the unmasked prefix of pretraining rows ({"tokens", "mask"}).
std::vector<std::string> read_contexts_file(const std::filesystem::path& path);

}  // namespace kinctx

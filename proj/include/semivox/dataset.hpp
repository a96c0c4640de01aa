#pragma once

// Dataset splits and the plain-text manifest that names them.
//
// Manifest format: '#' starts a comment, blank lines are skipped, a
// "[section]" line opens one of labeled / unlabeled / validation / test, and
// every other line is "<volume-path> <label-path>" relative to the manifest
// file. Label paths of unlabeled cases are carried for bookkeeping but never
// read during training.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "semivox/volume.hpp"
#include "semivox/volume_io.hpp"

namespace semivox {

struct CaseRef {
    std::string image_path;
    std::string label_path;
};

struct DatasetSplit {
    std::vector<CaseRef> labeled;
    std::vector<CaseRef> unlabeled;
    std::vector<CaseRef> validation;
    std::vector<CaseRef> test;
};

struct Case {
    Volume image;
    LabelMap labels;
    std::string id;
};

struct Dataset {
    std::vector<Case> labeled;
    std::vector<Case> unlabeled;
    std::vector<Case> validation;
    std::vector<Case> test;
    int num_classes = 0;
};

inline void check_split_disjoint(const DatasetSplit& s) {
    std::set<std::string> seen;
    auto add = [&](const std::vector<CaseRef>& cases, const char* section) {
        for (const auto& c : cases)
            if (!seen.insert(c.image_path).second)
                throw std::runtime_error("manifest: case " + c.image_path +
                                         " appears in more than one split (section " + section + ")");
    };
    add(s.labeled, "labeled");
    add(s.unlabeled, "unlabeled");
    add(s.validation, "validation");
    add(s.test, "test");
}

inline DatasetSplit parse_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    DatasetSplit split;
    std::vector<CaseRef>* section = nullptr;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        std::istringstream is(line);
        std::string first;
        if (!(is >> first)) continue;
        if (first.front() == '[') {
            if (first == "[labeled]") section = &split.labeled;
            else if (first == "[unlabeled]") section = &split.unlabeled;
            else if (first == "[validation]") section = &split.validation;
            else if (first == "[test]") section = &split.test;
            else throw std::runtime_error("manifest: unknown section " + first + " at line " +
                                          std::to_string(lineno));
            continue;
        }
        if (!section)
            throw std::runtime_error("manifest: entry before any [section] at line " +
                                     std::to_string(lineno));
        CaseRef ref;
        ref.image_path = first;
        if (!(is >> ref.label_path))
            throw std::runtime_error("manifest: expected \"volume label\" pair at line " +
                                     std::to_string(lineno));
        section->push_back(ref);
    }
    check_split_disjoint(split);
    return split;
}

inline void write_manifest(const std::string& path, const DatasetSplit& split) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("manifest: cannot write " + path);
    auto section = [&](const char* name, const std::vector<CaseRef>& cases) {
        f << "[" << name << "]\n";
        for (const auto& c : cases) f << c.image_path << " " << c.label_path << "\n";
    };
    section("labeled", split.labeled);
    section("unlabeled", split.unlabeled);
    section("validation", split.validation);
    section("test", split.test);
    if (!f) throw std::runtime_error("manifest: write failed on " + path);
}

inline Dataset load_dataset(const std::string& manifest_path) {
    const DatasetSplit split = parse_manifest(manifest_path);
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    Dataset ds;
    int max_classes = 1;
    auto load_cases = [&](const std::vector<CaseRef>& refs, std::vector<Case>& out) {
        for (const auto& ref : refs) {
            Case c;
            c.id = ref.image_path;
            c.image = load_volume_image((base / ref.image_path).string());
            c.labels = load_volume_labels((base / ref.label_path).string());
            if (c.labels.dims != c.image.dims)
                throw std::runtime_error("dataset: dims mismatch between " + ref.image_path +
                                         " and " + ref.label_path);
            max_classes = std::max(max_classes, c.labels.num_classes);
            out.push_back(std::move(c));
        }
    };
    load_cases(split.labeled, ds.labeled);
    load_cases(split.unlabeled, ds.unlabeled);
    load_cases(split.validation, ds.validation);
    load_cases(split.test, ds.test);
    ds.num_classes = max_classes;
    for (auto* cases : {&ds.labeled, &ds.unlabeled, &ds.validation, &ds.test})
        for (auto& c : *cases) c.labels.num_classes = ds.num_classes;
    return ds;
}

}  // namespace semivox

#include "litedet/graph.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <queue>
#include <set>

#include "kinds.hpp"

namespace litedet {

namespace {

constexpr const char* kInputRef = "@input";

struct Ref {
    bool is_input = false;
    std::string node;
    std::string port;
};

Ref parse_ref(const std::string& ref) {
    Ref r;
    if (ref == kInputRef) {
        r.is_input = true;
        return r;
    }
    const auto sep = ref.find(':');
    if (sep == std::string::npos) {
        r.node = ref;
    } else {
        r.node = ref.substr(0, sep);
        r.port = ref.substr(sep + 1);
    }
    return r;
}

std::string port_key(const std::string& id, const std::vector<std::string>& ports,
                     std::size_t idx) {
    return ports.size() == 1 ? id : id + ":" + ports[idx];
}

std::uint32_t crc32_bytes(const unsigned char* data, std::size_t len) {
    return (std::uint32_t)::crc32(0L, data, (uInt)len);
}

void append_le32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back((unsigned char)(v & 0xFF));
    out.push_back((unsigned char)((v >> 8) & 0xFF));
    out.push_back((unsigned char)((v >> 16) & 0xFF));
    out.push_back((unsigned char)((v >> 24) & 0xFF));
}

std::uint32_t read_le32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

}  // namespace

// ------------------------------------------------------------- ModelGraph

ModelGraph ModelGraph::from_json(const nlohmann::json& doc) {
    ModelGraph g;
    if (!doc.is_object()) throw ValidationError("graph document must be a JSON object");
    if (!doc.contains("meta") || !doc["meta"].is_object())
        throw ValidationError("graph document missing 'meta' object");
    const auto& meta = doc["meta"];
    if (!meta.contains("input_shape") || !meta["input_shape"].is_array() ||
        meta["input_shape"].size() != 4)
        throw ValidationError("meta.input_shape must be a 4-element array");
    for (const auto& v : meta["input_shape"]) g.meta.input_shape.push_back(v.get<int>());
    g.meta.num_classes = meta.value("num_classes", 1);

    if (!doc.contains("nodes") || !doc["nodes"].is_array())
        throw ValidationError("graph document missing 'nodes' array");
    for (const auto& jn : doc["nodes"]) {
        GraphNode node;
        node.id = jn.value("id", "");
        node.kind = jn.value("kind", "");
        node.attrs = jn.value("attrs", nlohmann::json::object());
        if (jn.contains("inputs"))
            for (const auto& r : jn["inputs"]) node.inputs.push_back(r.get<std::string>());
        g.nodes.push_back(std::move(node));
    }
    if (doc.contains("outputs"))
        for (const auto& r : doc["outputs"]) g.outputs.push_back(r.get<std::string>());

    g.validate();
    return g;
}

ModelGraph ModelGraph::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("graph: cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        f >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("graph: '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(doc);
}

nlohmann::json ModelGraph::to_json() const {
    nlohmann::json doc;
    doc["meta"] = {{"input_shape", meta.input_shape}, {"num_classes", meta.num_classes}};
    doc["nodes"] = nlohmann::json::array();
    for (const GraphNode& n : nodes)
        doc["nodes"].push_back(
            {{"id", n.id}, {"kind", n.kind}, {"attrs", n.attrs}, {"inputs", n.inputs}});
    doc["outputs"] = outputs;
    return doc;
}

void ModelGraph::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("graph: cannot open '" + path + "' for writing");
    f << to_json().dump(2) << "\n";
}

bool ModelGraph::has_node(const std::string& id) const {
    for (const GraphNode& n : nodes)
        if (n.id == id) return true;
    return false;
}

int ModelGraph::node_index(const std::string& id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id == id) return (int)i;
    throw ValidationError("graph: no node named '" + id + "'");
}

const GraphNode& ModelGraph::node(const std::string& id) const {
    return nodes[std::size_t(node_index(id))];
}

void ModelGraph::validate() {
    if (meta.input_shape.size() != 4)
        throw ValidationError("meta.input_shape must have 4 entries");
    for (int d : meta.input_shape)
        if (d < 1) throw ValidationError("meta.input_shape entries must be >= 1");
    if (meta.num_classes < 1) throw ValidationError("meta.num_classes must be >= 1");

    std::set<std::string> ids;
    for (const GraphNode& n : nodes) {
        if (n.id.empty() || n.id == kInputRef || n.id.find(':') != std::string::npos)
            throw ValidationError("invalid node id '" + n.id + "'");
        if (!ids.insert(n.id).second)
            throw ValidationError("duplicate node id '" + n.id + "'");
        if (!kinds::known_kind(n.kind))
            throw ValidationError("node '" + n.id + "': unknown kind '" + n.kind + "'");
    }

    // Resolve refs and build the dependency lists.
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < nodes.size(); ++i) index[nodes[i].id] = (int)i;
    std::vector<std::vector<int>> deps(nodes.size());
    auto check_ref = [&](const std::string& ref, const std::string& where) -> Ref {
        Ref r = parse_ref(ref);
        if (!r.is_input) {
            auto it = index.find(r.node);
            if (it == index.end())
                throw ValidationError(where + " references unknown node '" + r.node + "'");
        }
        return r;
    };
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        GraphNode& n = nodes[i];
        if (n.inputs.empty()) n.inputs.push_back(kInputRef);
        for (const std::string& ref : n.inputs) {
            Ref r = check_ref(ref, "node '" + n.id + "'");
            if (!r.is_input) deps[i].push_back(index[r.node]);
        }
    }

    // Kahn topological sort; leftovers expose a back edge.
    std::vector<int> indeg(nodes.size(), 0);
    std::vector<std::vector<int>> consumers(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (int d : deps[i]) {
            ++indeg[i];
            consumers[std::size_t(d)].push_back((int)i);
        }
    topo_order.clear();
    std::queue<int> ready;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (indeg[i] == 0) ready.push((int)i);
    while (!ready.empty()) {
        const int i = ready.front();
        ready.pop();
        topo_order.push_back(i);
        for (int c : consumers[std::size_t(i)])
            if (--indeg[std::size_t(c)] == 0) ready.push(c);
    }
    if (topo_order.size() != nodes.size()) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (indeg[i] == 0) continue;
            for (int d : deps[i])
                if (indeg[std::size_t(d)] > 0)
                    throw ValidationError("graph has a cycle: back edge '" +
                                          nodes[std::size_t(d)].id + "' -> '" + nodes[i].id + "'");
        }
        throw ValidationError("graph has a cycle");
    }

    // Shape propagation checks every channel contract.
    std::map<std::string, kinds::Shape> shapes;  // ref key -> shape
    const kinds::Shape in_shape{meta.input_shape[0], meta.input_shape[1], meta.input_shape[2],
                                meta.input_shape[3]};
    for (int idx : topo_order) {
        const GraphNode& n = nodes[std::size_t(idx)];
        std::vector<kinds::Shape> ins;
        for (const std::string& ref : n.inputs) {
            Ref r = parse_ref(ref);
            if (r.is_input) {
                ins.push_back(in_shape);
                continue;
            }
            auto it = shapes.find(ref);
            if (it == shapes.end())
                throw ValidationError("node '" + n.id + "' references unknown output '" + ref +
                                      "'");
            ins.push_back(it->second);
        }
        kinds::BlockVar blk = kinds::make_block(n);
        std::vector<kinds::Shape> outs;
        try {
            outs = kinds::output_shapes(blk, ins);
        } catch (const ShapeError& e) {
            std::string producers;
            for (const std::string& ref : n.inputs) {
                if (!producers.empty()) producers += ", ";
                producers += "'" + ref + "'";
            }
            throw ValidationError("node '" + n.id + "' (inputs " + producers + "): " + e.what());
        }
        const std::vector<std::string> ports = kinds::port_names(blk);
        for (std::size_t p = 0; p < outs.size(); ++p) shapes[port_key(n.id, ports, p)] = outs[p];

        if (n.kind == "gcdetect" || n.kind == "plain_detect") {
            const int nc = n.attrs.value("num_classes", -1);
            if (nc != meta.num_classes)
                throw ValidationError("node '" + n.id + "': num_classes " + std::to_string(nc) +
                                      " != meta.num_classes " +
                                      std::to_string(meta.num_classes));
        }
    }

    for (const std::string& ref : outputs) {
        Ref r = parse_ref(ref);
        if (r.is_input) throw ValidationError("graph output cannot be the model input");
        if (shapes.find(ref) == shapes.end())
            throw ValidationError("graph output '" + ref + "' does not name a node output");
    }
}

std::string ModelGraph::digest() const {
    const std::string dump = to_json().dump();
    const std::uint32_t crc =
        crc32_bytes(reinterpret_cast<const unsigned char*>(dump.data()), dump.size());
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", crc);
    return buf;
}

// ------------------------------------------------------------- WeightStore

float* WeightStore::add(const std::string& name, const std::vector<int>& shape) {
    if (entries.count(name)) throw ValidationError("weights: duplicate entry '" + name + "'");
    std::size_t len = 1;
    for (int d : shape) len *= std::size_t(d);
    WeightEntry e;
    e.shape = shape;
    e.offset = blob.size();
    e.length = len;
    entries[name] = e;
    blob.resize(blob.size() + len, 0.0f);
    return blob.data() + e.offset;
}

const float* WeightStore::view(const std::string& name, std::size_t expected_len) const {
    auto it = entries.find(name);
    if (it == entries.end())
        throw ValidationError("weights: missing entry '" + name + "'");
    if (expected_len != 0 && it->second.length != expected_len)
        throw ValidationError("weights: entry '" + name + "' has " +
                              std::to_string(it->second.length) + " values, expected " +
                              std::to_string(expected_len));
    return blob.data() + it->second.offset;
}

std::uint32_t WeightStore::checksum() const {
    std::vector<unsigned char> bytes(blob.size() * 4);
    for (std::size_t i = 0; i < blob.size(); ++i) {
        const std::uint32_t v = std::bit_cast<std::uint32_t>(blob[i]);
        bytes[4 * i] = (unsigned char)(v & 0xFF);
        bytes[4 * i + 1] = (unsigned char)((v >> 8) & 0xFF);
        bytes[4 * i + 2] = (unsigned char)((v >> 16) & 0xFF);
        bytes[4 * i + 3] = (unsigned char)((v >> 24) & 0xFF);
    }
    return crc32_bytes(bytes.data(), bytes.size());
}

WeightStore init_weights(const ModelGraph& g, std::uint64_t seed) {
    WeightStore store;
    Rng rng(seed);
    for (int idx : g.topo_order) {
        const GraphNode& n = g.nodes[std::size_t(idx)];
        kinds::BlockVar blk = kinds::make_block(n);
        for (const ParamRef& pr : kinds::block_params(blk)) {
            const ConvParams& cp = *pr.conv;
            const std::string base = n.id + "." + pr.name;
            float* wt = store.add(base + ".weight",
                                  {cp.c_out, cp.c_in / cp.groups, cp.k_h, cp.k_w});
            const double bound = 1.0 / std::sqrt((double)cp.fan_in());
            for (long long i = 0; i < cp.weight_count(); ++i)
                wt[i] = (float)rng.uniform(-bound, bound);
            store.add(base + ".bias", {cp.c_out});  // biases stay zero
        }
    }
    return store;
}

void save_weights(const WeightStore& w, const std::string& path) {
    nlohmann::json manifest;
    manifest["entries"] = nlohmann::json::object();
    for (const auto& [name, e] : w.entries)
        manifest["entries"][name] = {{"shape", e.shape},
                                     {"offset", e.offset},
                                     {"length", e.length}};
    const std::string mtext = manifest.dump();

    std::vector<unsigned char> bytes;
    bytes.reserve(12 + mtext.size() + w.blob.size() * 4);
    bytes.push_back('L');
    bytes.push_back('D');
    bytes.push_back('W');
    bytes.push_back('0');
    append_le32(bytes, (std::uint32_t)mtext.size());
    bytes.insert(bytes.end(), mtext.begin(), mtext.end());
    const std::size_t blob_start = bytes.size();
    for (float v : w.blob) append_le32(bytes, std::bit_cast<std::uint32_t>(v));
    const std::uint32_t crc =
        crc32_bytes(bytes.data() + blob_start, bytes.size() - blob_start);
    append_le32(bytes, crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("weights: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), (std::streamsize)bytes.size());
    if (!f) throw IoError("weights: write failed for '" + path + "'");
}

WeightStore load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("weights: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || bytes[0] != 'L' || bytes[1] != 'D' || bytes[2] != 'W' ||
        bytes[3] != '0')
        throw IoError("weights: '" + path + "' is not an LDW0 file");
    const std::uint32_t mlen = read_le32(bytes.data() + 4);
    if (bytes.size() < 8 + std::size_t(mlen) + 4)
        throw IoError("weights: '" + path + "' truncated");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + mlen);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("weights: '" + path + "' has a corrupt manifest: " + e.what());
    }

    const std::size_t blob_start = 8 + std::size_t(mlen);
    const std::size_t blob_bytes = bytes.size() - blob_start - 4;
    if (blob_bytes % 4 != 0) throw IoError("weights: '" + path + "' truncated");
    const std::uint32_t stored_crc = read_le32(bytes.data() + bytes.size() - 4);
    const std::uint32_t crc = crc32_bytes(bytes.data() + blob_start, blob_bytes);
    if (stored_crc != crc)
        throw IoError("weights: '" + path + "' checksum mismatch (file corrupt)");

    WeightStore w;
    w.blob.resize(blob_bytes / 4);
    for (std::size_t i = 0; i < w.blob.size(); ++i)
        w.blob[i] = std::bit_cast<float>(read_le32(bytes.data() + blob_start + 4 * i));

    if (!manifest.contains("entries") || !manifest["entries"].is_object())
        throw IoError("weights: '" + path + "' manifest missing entries");
    for (const auto& [name, je] : manifest["entries"].items()) {
        WeightEntry e;
        for (const auto& d : je["shape"]) e.shape.push_back(d.get<int>());
        e.offset = je["offset"].get<std::size_t>();
        e.length = je["length"].get<std::size_t>();
        if (e.offset + e.length > w.blob.size())
            throw IoError("weights: entry '" + name + "' exceeds blob bounds");
        w.entries[name] = e;
    }
    // Entries must tile the blob without overlap.
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& [name, e] : w.entries) spans.emplace_back(e.offset, e.length);
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].first < spans[i - 1].first + spans[i - 1].second)
            throw IoError("weights: '" + path + "' has overlapping entries");
    return w;
}

// ----------------------------------------------------------- forward_graph

namespace {

void bind_params(kinds::BlockVar& blk, const WeightStore& w, const std::string& node_id) {
    for (const ParamRef& pr : kinds::block_params(blk)) {
        ConvParams& cp = *pr.conv;
        const std::string base = node_id + "." + pr.name;
        const float* wt = w.view(base + ".weight", (std::size_t)cp.weight_count());
        cp.weight.assign(wt, wt + cp.weight_count());
        const float* b = w.view(base + ".bias", (std::size_t)cp.c_out);
        cp.bias.assign(b, b + cp.c_out);
    }
}

}  // namespace

std::map<std::string, Tensor4> forward_graph(const ModelGraph& g, const WeightStore& w,
                                             const Tensor4& input) {
    const auto& s = g.meta.input_shape;
    if (input.c != s[1] || input.h != s[2] || input.w != s[3])
        throw ShapeError("forward_graph: input " + input.shape_str() +
                         " does not match meta.input_shape " + std::to_string(s[0]) + "x" +
                         std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" +
                         std::to_string(s[3]) + " (batch may vary)");

    std::map<std::string, Tensor4> values;
    for (int idx : g.topo_order) {
        const GraphNode& n = g.nodes[std::size_t(idx)];
        std::vector<const Tensor4*> ins;
        for (const std::string& ref : n.inputs) {
            if (ref == kInputRef) {
                ins.push_back(&input);
                continue;
            }
            auto it = values.find(ref);
            if (it == values.end())
                throw ValidationError("forward_graph: node '" + n.id +
                                      "' references missing output '" + ref + "'");
            ins.push_back(&it->second);
        }
        kinds::BlockVar blk = kinds::make_block(n);
        bind_params(blk, w, n.id);
        std::vector<Tensor4> outs = kinds::block_forward(blk, ins);
        const std::vector<std::string> ports = kinds::port_names(blk);
        for (std::size_t p = 0; p < outs.size(); ++p)
            values[port_key(n.id, ports, p)] = std::move(outs[p]);
    }
    return values;
}

}  // namespace litedet

#include "sepsisfl/params.hpp"

#include <cstring>

#include "sepsisfl/common.hpp"

namespace sepsisfl::model {

std::shared_ptr<const ParamLayout> ParamLayout::make(
    std::vector<std::pair<std::string, std::vector<int>>> segments) {
    auto layout = std::make_shared<ParamLayout>();
    std::string canon;
    std::size_t offset = 0;
    for (auto& [name, shape] : segments) {
        Segment s;
        s.name = name;
        s.shape = shape;
        s.offset = offset;
        s.size = 1;
        for (int d : shape) {
            if (d <= 0) throw ConfigError("ParamLayout: non-positive dim in segment " + name);
            s.size *= static_cast<std::size_t>(d);
        }
        offset += s.size;
        canon += name;
        canon += ':';
        for (int d : shape) {
            canon += std::to_string(d);
            canon += ',';
        }
        canon += ';';
        layout->segments_.push_back(std::move(s));
    }
    layout->total_ = offset;
    layout->digest_ = sha256(canon);
    return layout;
}

const ParamLayout::Segment& ParamLayout::segment(std::string_view name) const {
    for (const auto& s : segments_)
        if (s.name == name) return s;
    throw LookupError("ParamLayout: unknown segment '" + std::string(name) + "'");
}

bool ParamLayout::has(std::string_view name) const {
    for (const auto& s : segments_)
        if (s.name == name) return true;
    return false;
}

ParamVector::ParamVector(LayoutPtr layout, std::vector<double> flat)
    : layout_(std::move(layout)), flat_(std::move(flat)) {
    if (flat_.size() != layout_->size())
        throw ProtocolError("ParamVector: flat size does not match layout");
}

std::span<double> ParamVector::seg(std::string_view name) {
    const auto& s = layout_->segment(name);
    return {flat_.data() + s.offset, s.size};
}

std::span<const double> ParamVector::seg(std::string_view name) const {
    const auto& s = layout_->segment(name);
    return {flat_.data() + s.offset, s.size};
}

numcore::Tensor ParamVector::seg_tensor(std::string_view name) const {
    const auto& s = layout_->segment(name);
    return numcore::Tensor(s.shape,
                           std::vector<double>(flat_.begin() + static_cast<long>(s.offset),
                                               flat_.begin() + static_cast<long>(s.offset + s.size)));
}

void ParamVector::set_seg(std::string_view name, const numcore::Tensor& t) {
    const auto& s = layout_->segment(name);
    if (t.size() != s.size)
        throw ProtocolError("ParamVector: segment size mismatch for '" + std::string(name) + "'");
    std::memcpy(flat_.data() + s.offset, t.data(), s.size * sizeof(double));
}

bool ParamVector::same_layout(const ParamVector& other) const {
    return layout_ && other.layout_ && layout_->digest() == other.layout_->digest();
}

std::vector<unsigned char> ParamVector::serialize() const {
    std::vector<unsigned char> out;
    out.reserve(32 + flat_.size() * 8);
    const auto& d = layout_->digest();
    out.insert(out.end(), d.begin(), d.end());
    for (double v : flat_) put_f64(out, v);
    return out;
}

ParamVector ParamVector::deserialize(LayoutPtr layout, std::span<const unsigned char> bytes) {
    if (bytes.size() != 32 + layout->size() * 8)
        throw ProtocolError("ParamVector::deserialize: byte length mismatch");
    if (!std::equal(layout->digest().begin(), layout->digest().end(), bytes.begin()))
        throw ProtocolError("ParamVector::deserialize: layout digest mismatch");
    std::vector<double> flat(layout->size());
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = get_f64(bytes.data() + 32 + i * 8);
    return ParamVector(std::move(layout), std::move(flat));
}

}  // namespace sepsisfl::model

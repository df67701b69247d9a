"""Synthetic desk-scale corpus with a planted toxic lexicon.

Every toxic sentence is a template instantiated with one planted word; the
civil side is the same sentence with that word replaced by a neutral
substitute. The planted lexicon makes toxicity linearly separable, so the toy
classifier, all six training methods, and the deletion audit are exercised
end to end without any pretrained resources.
"""

from .corpus import ParallelPair, split_corpus

# Made-up toxic markers so the repository carries no real slurs.
TOY_TOXIC_LEXICON = (
    "grubbish", "snarlful", "blightish", "vexsome", "crudnik",
    "muckish", "scornful", "rotweed", "foulbore", "drekkish",
)

TOY_SUBSTITUTE = "gentle"

TOY_TEMPLATES = (
    "you are a {} person .",
    "that was a {} idea you had .",
    "what a {} day this turned out to be .",
    "stop being so {} about everything .",
    "his {} comment ruined the meeting .",
    "her {} attitude surprised everyone .",
    "this {} plan will never work .",
    "the {} reply made things worse .",
    "i cannot stand your {} remarks .",
    "they posted a {} message again .",
    "such a {} way to treat people .",
    "the whole thread became {} quickly .",
    "your {} tone is not helping .",
    "that {} joke was not funny .",
    "we heard another {} speech today .",
    "my neighbor left a {} note .",
    "the review sounded {} and unfair .",
    "a {} answer helps no one .",
    "their {} behavior shocked the team .",
    "he gave a {} shrug and left .",
    "she wrote a {} letter to the editor .",
    "the forum is full of {} posts .",
    "nobody enjoys a {} argument .",
    "that was one {} email to receive .",
    "the coach made a {} call .",
    "its a {} habit to break .",
    "reading {} comments wears me down .",
    "the debate turned {} after midnight .",
    "a {} rumor spread through the office .",
    "the caller left a {} voicemail .",
)


def make_toy_pairs(lexicon=TOY_TOXIC_LEXICON, substitute=TOY_SUBSTITUTE, lang="en", id_prefix="toy"):
    """One pair per (template, planted word): 300 pairs with the defaults."""
    pairs = []
    for ti, template in enumerate(TOY_TEMPLATES):
        for wi, word in enumerate(lexicon):
            pairs.append(
                ParallelPair(
                    id=f"{id_prefix}-{ti:02d}-{wi:02d}",
                    lang=lang,
                    toxic=template.format(word),
                    civil=template.format(substitute),
                )
            )
    return pairs


def make_toy_split(seed=0, sizes=(240, 30, 30), **kwargs):
    return split_corpus(make_toy_pairs(**kwargs), sizes, seed)


# A second planted lexicon for the knowledge-transfer auxiliary task
# (sentiment-flavored stand-in sharing the template inventory).
TOY_AUX_LEXICON = (
    "glumpy", "drabworn", "mopeful", "dourish", "sulkbound",
    "frownish", "wiltsome", "gloomful", "sagged", "bleakish",
)


def make_toy_aux_split(seed=1, sizes=(240, 30, 30), lexicon=TOY_AUX_LEXICON, substitute="cheerful"):
    return make_toy_split(seed=seed, sizes=sizes, lexicon=lexicon, substitute=substitute, id_prefix="aux")

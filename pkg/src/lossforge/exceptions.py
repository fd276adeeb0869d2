class LossForgeError(Exception):
    pass


class CorruptGenome(LossForgeError, ValueError):
    pass


class GenomeParseError(CorruptGenome):
    """Genome text could not be parsed.

    `position` is either a character offset into the text, or a path such as
    ``nodes[3].in_a`` pointing at the offending field.
    """
    def __init__(self, message, position):
        super(GenomeParseError, self).__init__(
            '{} (at {})'.format(message, position),
        )
        self.position = position


class DegenerateLoss(LossForgeError, ArithmeticError):
    def __init__(self, genome_hash, what='loss'):
        super(DegenerateLoss, self).__init__(
            'non-finite {} for genome {}'.format(what, genome_hash),
        )
        self.genome_hash = genome_hash


class DistributionError(LossForgeError, ValueError):
    pass


class DatasetFormatError(LossForgeError, ValueError):
    def __init__(self, filename, reason):
        super(DatasetFormatError, self).__init__(
            '{}: {}'.format(filename, reason),
        )
        self.filename = filename


class ConfigError(LossForgeError, ValueError):
    pass

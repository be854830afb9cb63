"""Module containing unit tests on the utils module."""

import unittest

from convnn.utils import as_list, get_specifier_dict, median_time, parse_value, zeropad


class ZeropadTestCase(unittest.TestCase):

    def test_pad_to_largest(self):
        self.assertEqual(zeropad(3, 120), '003')
        self.assertEqual(zeropad(12, 99), '12')
        self.assertEqual(zeropad(0, 27), '00')


class ParseValueTestCase(unittest.TestCase):
    """Tests on `parse_value`."""

    def test_keywords(self):
        for value, expected in (('true', True), ('Yes', True), ('false', False),
                                ('NO', False), ('none', None), ('null', None)):
            with self.subTest(value=value):
                self.assertIs(parse_value(value), expected)

    def test_numbers(self):
        self.assertEqual(parse_value('9'), 9)
        self.assertIsInstance(parse_value('9'), int)
        self.assertEqual(parse_value('0.5'), 0.5)
        self.assertEqual(parse_value('1e-3'), 1e-3)

    def test_string_stripped(self):
        self.assertEqual(parse_value(' random '), 'random')

    def test_non_string_passed_through(self):
        self.assertEqual(parse_value(4), 4)


class SpecifierDictTestCase(unittest.TestCase):
    """Tests on `get_specifier_dict`."""

    def test_base_key_and_defaults(self):
        spec = get_specifier_dict('branching[0.5, k=9]', name_key='kind',
                                  base_key='lambda', defaults={'kernel': 3})
        self.assertEqual(spec, {'kind': 'branching', 'lambda': 0.5, 'k': 9, 'kernel': 3})

    def test_no_specifiers(self):
        self.assertEqual(get_specifier_dict('conv', name_key='kind'), {'kind': 'conv'})
        self.assertEqual(get_specifier_dict(' conv[] ', name_key='kind'), {'kind': 'conv'})

    def test_defaults_do_not_override(self):
        spec = get_specifier_dict('kvt[k=3]', name_key='kind', defaults={'k': 8})
        self.assertEqual(spec['k'], 3)

    def test_values_cast(self):
        spec = get_specifier_dict('convnn[strategy=random, bias=false, r=16]',
                                  name_key='kind')
        self.assertEqual(spec, {'kind': 'convnn', 'strategy': 'random', 'bias': False,
                                'r': 16})

    def test_raise_on_duplicate_key(self):
        with self.assertRaises(ValueError):
            get_specifier_dict('kvt[k=3, k=4]', name_key='kind')

    def test_raise_on_base_value_given_twice(self):
        with self.assertRaises(ValueError):
            get_specifier_dict('branching[0.5, lambda=0.25]', name_key='kind',
                               base_key='lambda')

    def test_raise_on_multiple_base_values(self):
        with self.assertRaises(ValueError):
            get_specifier_dict('branching[0.5, 0.25]', name_key='kind', base_key='lambda')

    def test_raise_on_base_value_without_base_key(self):
        with self.assertRaises(ValueError):
            get_specifier_dict('kvt[3]', name_key='kind')

    def test_raise_on_non_string(self):
        with self.assertRaises(TypeError):
            get_specifier_dict({'kind': 'conv'}, name_key='kind')

    def test_raise_on_unparsable(self):
        for key in ('conv[k=3', 'conv[k=[3]]', 'two words'):
            with self.subTest(key=key):
                with self.assertRaises(ValueError):
                    get_specifier_dict(key, name_key='kind')


class MiscTestCase(unittest.TestCase):

    def test_as_list(self):
        self.assertEqual(as_list(1), [1])
        self.assertEqual(as_list((1, 2)), [1, 2])
        self.assertEqual(as_list([3]), [3])

    def test_median_time_calls(self):
        calls = []
        median, times = median_time(lambda: calls.append(1), repeats=5, warmup=2)
        self.assertEqual(len(calls), 7)
        self.assertEqual(len(times), 5)
        self.assertGreaterEqual(median, 0.0)

    def test_raise_on_no_repeats(self):
        with self.assertRaises(ValueError):
            median_time(lambda: None, repeats=0)
